use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid config: {0}")]
    Config(String),

    /// Rows of a delimited dataset that failed to parse, with 1-based data row numbers.
    #[error("ingestion failed: {}", format_rows(.rows))]
    Ingest { rows: Vec<(usize, String)> },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_rows(rows: &[(usize, String)]) -> String {
    rows.iter()
        .map(|(row, msg)| format!("row {row}: {msg}"))
        .collect::<Vec<_>>()
        .join("; ")
}
