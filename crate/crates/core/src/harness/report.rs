//! Report files: the full JSON report, the resolved config, and flat CSV
//! tables for plotting. Nothing written here depends on wall-clock time, so
//! reruns with the same config produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::to_toml;
use super::defense::{InversionReport, InversionRow};
use super::recommendation::{setting_label, RecommendationReport};
use crate::error::{Error, Result};

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_table<R: Serialize>(path: &Path, rows: &[R], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header).map_err(|e| Error::io(path, e.into()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_file(path, &bytes)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e.into()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct MetricsLine {
    seed: u64,
    setting: String,
    sigma: f64,
    n: u64,
    alpha: f64,
    accuracy: f64,
    abstention_rate: f64,
    error_rate: f64,
    avg_radius: f64,
    avg_radius_bmi: f64,
    certified_positive: usize,
    augmented_positives: usize,
    empirical_expansion: f64,
    binned_expansion: f64,
    trajectory_certified: usize,
}

#[derive(Serialize)]
struct HistogramLine<'a> {
    seed: u64,
    setting: &'a str,
    bin_lo: f64,
    count: u64,
}

#[derive(Serialize)]
struct ApeLine<'a> {
    seed: u64,
    setting: &'a str,
    record: usize,
    z: f64,
    label_or_abstain: String,
    radius: f64,
}

#[derive(Serialize)]
struct CurveLine {
    seed: u64,
    sigma: f64,
    /// Empty for the undefended baseline.
    votes: Option<u64>,
    asr: f64,
    accuracy: f64,
    mean_queries: f64,
}

const METRICS_HEADER: &[&str] = &[
    "seed",
    "setting",
    "sigma",
    "n",
    "alpha",
    "accuracy",
    "abstention_rate",
    "error_rate",
    "avg_radius",
    "avg_radius_bmi",
    "certified_positive",
    "augmented_positives",
    "empirical_expansion",
    "binned_expansion",
    "trajectory_certified",
];

/// Writes `<kind>.json`, `<kind>_config.toml`, `<kind>_metrics.csv`,
/// `<kind>_histograms.csv` and `<kind>_ape.csv` into `dir`.
pub fn write_recommendation_report(report: &RecommendationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    prepare_dir(dir)?;
    let kind = report.kind.as_str();
    let path = |suffix: &str| dir.join(format!("{kind}{suffix}"));

    let mut metrics = Vec::new();
    for run in &report.runs {
        metrics.push(MetricsLine {
            seed: run.seed,
            setting: "base".to_string(),
            sigma: 0.0,
            n: 0,
            alpha: 0.0,
            accuracy: run.base.accuracy,
            abstention_rate: 0.0,
            error_rate: 1.0 - run.base.accuracy,
            avg_radius: 0.0,
            avg_radius_bmi: 0.0,
            certified_positive: 0,
            augmented_positives: run.base.augmented_positives,
            empirical_expansion: run.base.empirical_expansion,
            binned_expansion: run.base.binned_expansion,
            trajectory_certified: 0,
        });
        for r in &run.rows {
            metrics.push(MetricsLine {
                seed: run.seed,
                setting: setting_label(r.sigma, r.n, r.alpha),
                sigma: r.sigma,
                n: r.n,
                alpha: r.alpha,
                accuracy: r.accuracy,
                abstention_rate: r.abstention_rate,
                error_rate: r.error_rate,
                avg_radius: r.avg_radius,
                avg_radius_bmi: r.avg_radius_bmi,
                certified_positive: r.certified_positive,
                augmented_positives: r.augmented_positives,
                empirical_expansion: r.empirical_expansion,
                binned_expansion: r.binned_expansion,
                trajectory_certified: r.trajectory_certified,
            });
        }
    }

    let histograms: Vec<HistogramLine> = report
        .runs
        .iter()
        .flat_map(|run| {
            run.histograms.iter().flat_map(move |h| {
                h.bins.iter().map(move |b| HistogramLine {
                    seed: run.seed,
                    setting: &h.setting,
                    bin_lo: b.bin_lo,
                    count: b.count,
                })
            })
        })
        .collect();

    let ape: Vec<ApeLine> = report
        .runs
        .iter()
        .flat_map(|run| {
            run.ape.iter().flat_map(move |a| {
                a.points.iter().map(move |p| ApeLine {
                    seed: run.seed,
                    setting: &a.setting,
                    record: a.record,
                    z: p.z,
                    label_or_abstain: p.label.map_or_else(|| "abstain".to_string(), |l| l.to_string()),
                    radius: p.radius,
                })
            })
        })
        .collect();

    let files = vec![
        path(".json"),
        path("_config.toml"),
        path("_metrics.csv"),
        path("_histograms.csv"),
        path("_ape.csv"),
    ];
    write_json(&files[0], report)?;
    write_file(&files[1], to_toml(&report.config)?.as_bytes())?;
    write_table(&files[2], &metrics, METRICS_HEADER)?;
    write_table(&files[3], &histograms, &["seed", "setting", "bin_lo", "count"])?;
    write_table(
        &files[4],
        &ape,
        &["seed", "setting", "record", "z", "label_or_abstain", "radius"],
    )?;
    Ok(files)
}

fn curve_line(seed: u64, r: &InversionRow) -> CurveLine {
    CurveLine {
        seed,
        sigma: r.sigma,
        votes: r.votes,
        asr: r.asr,
        accuracy: r.accuracy,
        mean_queries: r.mean_queries,
    }
}

/// Writes `inversion.json`, `inversion_config.toml` and `inversion_curves.csv` into `dir`.
pub fn write_inversion_report(report: &InversionReport, dir: &Path) -> Result<Vec<PathBuf>> {
    prepare_dir(dir)?;
    let curves: Vec<CurveLine> = report
        .runs
        .iter()
        .flat_map(|run| std::iter::once(&run.baseline).chain(&run.cells).map(|r| curve_line(run.seed, r)))
        .collect();
    let files = vec![
        dir.join("inversion.json"),
        dir.join("inversion_config.toml"),
        dir.join("inversion_curves.csv"),
    ];
    write_json(&files[0], report)?;
    write_file(&files[1], to_toml(&report.config)?.as_bytes())?;
    write_table(
        &files[2],
        &curves,
        &["seed", "sigma", "votes", "asr", "accuracy", "mean_queries"],
    )?;
    Ok(files)
}
