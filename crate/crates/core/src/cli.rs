//! The `rprivacy` command line.
//!
//! Every command prints its fully resolved settings as TOML before doing any
//! work. Failures print a single `error: kind=<kind> message=<text>` line on
//! stderr and exit with status 1; flag errors print clap's usage text and exit
//! with status 2.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::{load_toml, to_toml, InversionConfig, RecommendationConfig};
use crate::harness::data::{export_csv, generate_synthetic_insurance, Featurizer};
use crate::harness::defense::{attack_config, attack_one, build_toy_task};
use crate::harness::recommendation::{prepare_task, run_ablation, run_recommendation_experiment, RecommendationReport};
use crate::harness::report::{write_inversion_report, write_recommendation_report};
use crate::inversion::trace_csv;
use crate::nn::MlpModel;
use crate::numerics::RngStream;
use crate::smoothing::{certify, predict_smoothed, Classifier, CertifyOutcome, SmoothedOutcome, SmoothingParams};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "RPRIVACY_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "rprivacy", version, about = "Certified robustness as inference-time privacy")]
pub struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic insurance dataset as CSV.
    GenData(GenDataArgs),
    /// Train the BMI-threshold base classifier and save a checkpoint.
    Train(TrainArgs),
    /// Certify one point: label, L2 radius and the lower confidence bound.
    Certify(PointArgs),
    /// Abstaining smoothed prediction for one point.
    Predict(PointArgs),
    /// Recommendation study over the configured sigmas: metrics, histograms, inference sets.
    Ape(RecommendationArgs),
    /// Recommendation study over the (N, alpha) ablation cells.
    Ablation(RecommendationArgs),
    /// Single label-only inversion attack on the toy task, with its trace.
    Invert(InvertArgs),
    /// Inversion attacks over the (sigma, N) grid: ASR and accuracy curves.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "results")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 10_000)]
    pub records: usize,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Recommendation config; only data, split, percentile and model settings are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV dataset instead of synthetic records.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub records: Option<usize>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct PointArgs {
    /// Model checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// File with the point's coordinates, separated by commas or whitespace.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1000)]
    pub n: u64,
    #[arg(long, default_value_t = 100)]
    pub n0: u64,
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RecommendationArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replaces the config's seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub records: Option<usize>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replaces the config's seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub targets: Option<usize>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Task seed; defaults to the config's first seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Attack index; the target class is `index % classes`.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Oracle noise; 0 attacks the undefended model.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 100)]
    pub votes: u64,
    #[command(flatten)]
    pub out: OutArg,
}

/// Short name of an error variant for the one-line error report.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Domain(_) => "domain",
        Error::Config(_) => "config",
        Error::Ingest { .. } => "ingest",
        Error::Checkpoint(_) => "checkpoint",
        Error::Io { .. } => "io",
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run_with_jobs(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: kind={} message={}", error_kind(&e), e.to_string().replace('\n', " "));
            1
        }
    }
}

fn run_with_jobs(cli: Cli) -> Result<()> {
    match cli.jobs {
        None => run(cli.command),
        Some(0) => Err(Error::config("--jobs must be positive")),
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| Error::config(e.to_string()))?;
            pool.install(|| run(cli.command))
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Certify(a) => point_cmd(a, true),
        Command::Predict(a) => point_cmd(a, false),
        Command::Ape(a) => recommendation_cmd(a, false),
        Command::Ablation(a) => recommendation_cmd(a, true),
        Command::Invert(a) => invert_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    }
}

fn print_resolved<T: Serialize>(value: &T) -> Result<String> {
    let text = to_toml(value)?;
    println!("# resolved config");
    print!("{text}");
    println!();
    Ok(text)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), load_toml)
}

#[derive(Serialize)]
struct GenDataSettings {
    records: usize,
    seed: u64,
    out: PathBuf,
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let settings = GenDataSettings {
        records: a.records,
        seed: a.seed,
        out: a.out.out.clone(),
    };
    let text = print_resolved(&settings)?;
    let records = generate_synthetic_insurance(a.records, a.seed)?;
    create_dir(&a.out.out)?;
    let path = a.out.out.join("insurance.csv");
    export_csv(&records, &path)?;
    write(&a.out.out.join("gen_data_config.toml"), &text)?;
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    threshold_b: f64,
    train_size: usize,
    test_size: usize,
    test_accuracy: f64,
    feature_names: Vec<&'static str>,
    featurizer: Featurizer,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg: RecommendationConfig = load_or_default(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seeds = vec![seed];
    }
    if a.data.is_some() {
        cfg.data_csv = a.data;
    }
    if let Some(r) = a.records {
        cfg.records = r;
    }
    cfg.validate()?;
    let text = print_resolved(&cfg)?;
    let seed = cfg.seeds[0];
    let task = prepare_task(&cfg, seed)?;
    let correct = task
        .test_x
        .iter()
        .zip(&task.test_labels)
        .filter(|(x, &y)| task.classifier.classify(x) == y)
        .count();
    let summary = TrainSummary {
        seed,
        threshold_b: task.threshold_b,
        train_size: task.train_size,
        test_size: task.test.len(),
        test_accuracy: correct as f64 / task.test.len() as f64,
        feature_names: crate::harness::data::FEATURE_NAMES.to_vec(),
        featurizer: task.featurizer,
    };

    let dir = &a.out.out;
    create_dir(dir)?;
    task.model.save(&dir.join("model.ckpt"))?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::config(e.to_string()))?;
    write(&dir.join("train_summary.json"), &(json + "\n"))?;
    write(&dir.join("train_config.toml"), &text)?;
    println!(
        "threshold_b={} test_accuracy={} checkpoint={}",
        summary.threshold_b,
        summary.test_accuracy,
        dir.join("model.ckpt").display()
    );
    Ok(())
}

/// Reads a point written as numbers separated by commas or whitespace.
pub fn read_point(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let point = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::domain(format!("{}: not a number: {t:?}", path.display())))
        })
        .collect::<Result<Vec<f64>>>()?;
    if point.is_empty() {
        return Err(Error::domain(format!("{}: no coordinates", path.display())));
    }
    Ok(point)
}

#[derive(Serialize)]
struct PointSettings<'a> {
    model: &'a Path,
    input: &'a Path,
    sigma: f64,
    n: u64,
    n0: u64,
    alpha: f64,
    seed: u64,
}

fn point_cmd(a: PointArgs, certified: bool) -> Result<()> {
    print_resolved(&PointSettings {
        model: &a.model,
        input: &a.input,
        sigma: a.sigma,
        n: a.n,
        n0: a.n0,
        alpha: a.alpha,
        seed: a.seed,
    })?;
    let params = SmoothingParams::new(a.sigma, a.n, a.n0, a.alpha)?;
    let model = MlpModel::load(&a.model)?;
    let x = read_point(&a.input)?;
    let mut stream = RngStream::new(a.seed, 0);
    if certified {
        match certify(&model, &x, &params, &mut stream)? {
            CertifyOutcome::Certified(c) => {
                println!("label={} radius={} pa_lower={}", c.label, c.radius, c.pa_lower)
            }
            CertifyOutcome::Abstain => println!("label=abstain radius=0 pa_lower=n/a"),
        }
    } else {
        match predict_smoothed(&model, &x, &params, &mut stream)? {
            SmoothedOutcome::Predicted(label) => println!("label={label}"),
            SmoothedOutcome::Abstain => println!("label=abstain"),
        }
    }
    Ok(())
}

fn print_histograms(report: &RecommendationReport) {
    for run in &report.runs {
        for h in &run.histograms {
            println!("seed={} setting={}", run.seed, h.setting);
            println!("  bin_lo  count");
            for b in &h.bins {
                println!("  {:>6.1}  {}", b.bin_lo, b.count);
            }
        }
    }
}

fn recommendation_cmd(a: RecommendationArgs, ablation: bool) -> Result<()> {
    let mut cfg: RecommendationConfig = load_or_default(a.config.as_deref())?;
    if let Some(seeds) = a.seeds {
        cfg.seeds = seeds;
    }
    if a.data.is_some() {
        cfg.data_csv = a.data;
    }
    if let Some(r) = a.records {
        cfg.records = r;
    }
    cfg.validate()?;
    print_resolved(&cfg)?;
    let report = if ablation {
        run_ablation(&cfg)?
    } else {
        run_recommendation_experiment(&cfg)?
    };
    let files = write_recommendation_report(&report, &a.out.out)?;
    for run in &report.runs {
        println!("seed={} threshold_b={} base_accuracy={}", run.seed, run.threshold_b, run.base.accuracy);
        for r in &run.rows {
            println!(
                "  sigma={} n={} alpha={} accuracy={:.4} abstention={:.4} avg_radius={:.4} expansion={:.2}",
                r.sigma, r.n, r.alpha, r.accuracy, r.abstention_rate, r.avg_radius, r.empirical_expansion
            );
        }
    }
    print_histograms(&report);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let mut cfg: InversionConfig = load_or_default(a.config.as_deref())?;
    if let Some(seeds) = a.seeds {
        cfg.seeds = seeds;
    }
    if let Some(t) = a.targets {
        cfg.targets = t;
    }
    cfg.validate()?;
    print_resolved(&cfg)?;
    let report = crate::harness::defense::run_inversion_experiment(&cfg)?;
    let files = write_inversion_report(&report, &a.out.out)?;
    println!("seed sigma votes asr accuracy mean_queries");
    for run in &report.runs {
        for r in std::iter::once(&run.baseline).chain(&run.cells) {
            let votes = r.votes.map_or_else(|| "-".to_string(), |v| v.to_string());
            println!(
                "{} {} {} {:.2} {:.3} {:.1}",
                run.seed, r.sigma, votes, r.asr, r.accuracy, r.mean_queries
            );
        }
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct InvertSettings<'a> {
    seed: u64,
    index: usize,
    sigma: f64,
    votes: u64,
    config: &'a InversionConfig,
}

#[derive(Serialize)]
struct InvertSummary {
    seed: u64,
    index: usize,
    target: usize,
    sigma: f64,
    votes: u64,
    converged: bool,
    evaluator_label: Option<usize>,
    queries_used: usize,
    iterations: usize,
    abandoned_reason: Option<String>,
    final_point: Vec<f64>,
}

fn invert_cmd(a: InvertArgs) -> Result<()> {
    let mut cfg: InversionConfig = load_or_default(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) || a.votes == 0 {
        return Err(Error::config("--sigma must be non-negative and --votes positive"));
    }
    let seed = cfg.seeds[0];
    let text = print_resolved(&InvertSettings {
        seed,
        index: a.index,
        sigma: a.sigma,
        votes: a.votes,
        config: &cfg,
    })?;
    let task = build_toy_task(&cfg, seed)?;
    let result = attack_one(&task, &cfg, a.index, a.sigma, a.votes)?;
    let attack = attack_config(&cfg, seed, a.index);
    let summary = InvertSummary {
        seed,
        index: a.index,
        target: result.target,
        sigma: a.sigma,
        votes: a.votes,
        converged: result.success,
        evaluator_label: (!result.final_point.is_empty()).then(|| task.evaluator.classify(&result.final_point)),
        queries_used: result.queries_used,
        iterations: result.iterations,
        abandoned_reason: result.abandoned_reason.clone(),
        final_point: result.final_point.clone(),
    };

    let dir = &a.out.out;
    create_dir(dir)?;
    write(&dir.join("invert_trace.csv"), &trace_csv(&result, attack.probe_count))?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::config(e.to_string()))?;
    write(&dir.join("invert.json"), &(json + "\n"))?;
    write(&dir.join("invert_config.toml"), &text)?;
    let evaluator = summary
        .evaluator_label
        .map_or_else(|| "none".to_string(), |l| l.to_string());
    println!(
        "target={} converged={} evaluator_label={} success={} queries={}",
        summary.target,
        summary.converged,
        evaluator,
        summary.evaluator_label == Some(summary.target),
        summary.queries_used
    );
    Ok(())
}
