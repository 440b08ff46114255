//! BMI-threshold recommendation study: base vs. smoothed classifiers, the
//! trajectory-augmented evaluation set, positive-prediction histograms and the
//! (N, alpha) ablation.
//!
//! Every record draws its Monte Carlo noise from a stream keyed by its index,
//! and the same stream is reused for every sigma and ablation cell. Settings
//! are therefore compared on common random numbers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RecommendationConfig;
use super::data::{
    generate_synthetic_insurance, ingest_csv, label_by_percentile, label_records, train_test_split, Featurizer,
    InsuranceRecord,
};
use crate::ape::{
    baseline_inference_set, binned_expansion, build_trajectory, empirical_expansion, expanded_inference_set,
    histogram, ApeGrid, HistogramBin, TrajectorySpec,
};
use crate::error::{Error, Result};
use crate::nn::{train, Example, LabeledData, MlpModel};
use crate::numerics::RngStream;
use crate::smoothing::{
    certify, certify_from_votes, predict_from_votes, predict_smoothed, sample_votes, CertifyOutcome, Classifier,
    FrozenMlp, SmoothedOutcome, SmoothingParams,
};

const PREDICT_STREAM: u64 = 0x70_0001;
const CERTIFY_STREAM: u64 = 0x70_0002;
const AUGMENTED_STREAM: u64 = 0x70_0003;
const TRAJECTORY_CERT_STREAM: u64 = 0x70_0004;
const APE_PREDICT_STREAM: u64 = 0x70_0005;
const APE_CERTIFY_STREAM: u64 = 0x70_0006;

const POSITIVE: usize = 1;

/// One evaluation point: a record's context with a possibly overwritten BMI.
#[derive(Debug, Clone)]
pub struct AugmentedPoint {
    /// Position in the test split.
    pub record: usize,
    pub bmi: f64,
    pub x: Vec<f64>,
    pub trajectory: bool,
}

/// Data, split, threshold and trained base model for one seed.
pub struct PreparedTask {
    pub seed: u64,
    pub test: Vec<InsuranceRecord>,
    pub train_size: usize,
    pub threshold_b: f64,
    pub featurizer: Featurizer,
    pub model: MlpModel,
    /// Inference copy of `model` used for every label in the experiment.
    pub classifier: FrozenMlp,
    pub test_x: Vec<Vec<f64>>,
    pub test_labels: Vec<usize>,
    /// Test positions the base model predicts positive.
    pub d_t1: Vec<usize>,
    pub augmented: Vec<AugmentedPoint>,
}

pub fn load_records(cfg: &RecommendationConfig, seed: u64) -> Result<Vec<InsuranceRecord>> {
    match &cfg.data_csv {
        Some(path) => ingest_csv(path),
        None => generate_synthetic_insurance(cfg.records, seed),
    }
}

/// Masked L1 penalty on every first-layer column except BMI.
pub fn l1_mask(featurizer: &Featurizer) -> Vec<bool> {
    (0..featurizer.dim()).map(|c| c != featurizer.bmi_index()).collect()
}

pub fn prepare_task(cfg: &RecommendationConfig, seed: u64) -> Result<PreparedTask> {
    cfg.validate()?;
    let records = load_records(cfg, seed)?;
    let (train_idx, test_idx) = train_test_split(records.len(), cfg.train_fraction, seed)?;
    let train_records: Vec<InsuranceRecord> = train_idx.iter().map(|&i| records[i].clone()).collect();
    let test: Vec<InsuranceRecord> = test_idx.iter().map(|&i| records[i].clone()).collect();

    let (train_labels, threshold_b) = label_by_percentile(&train_records, cfg.percentile)?;
    let featurizer = Featurizer::fit(&train_records)?;
    let examples = featurizer
        .transform_all(&train_records)
        .into_iter()
        .zip(train_labels)
        .map(|(x, y)| Example::new(x, y))
        .collect();
    let data = LabeledData::new(examples, 2)?;
    let model = train(&data, &cfg.model.train_config(l1_mask(&featurizer), seed))?;
    let classifier = FrozenMlp::from(&model);

    let test_x = featurizer.transform_all(&test);
    let test_labels = label_records(&test, threshold_b);
    let d_t1: Vec<usize> = (0..test.len())
        .filter(|&i| classifier.classify(&test_x[i]) == POSITIVE)
        .collect();

    let trajectory = build_trajectory(&TrajectorySpec {
        threshold_b,
        step_s: cfg.trajectory.step,
        count_j: cfg.trajectory.count,
    })?;
    let with_trajectory = cfg.trajectory.records.unwrap_or(d_t1.len()).min(d_t1.len());
    let mut augmented: Vec<AugmentedPoint> = d_t1
        .iter()
        .map(|&i| AugmentedPoint {
            record: i,
            bmi: test[i].bmi,
            x: test_x[i].clone(),
            trajectory: false,
        })
        .collect();
    for &i in &d_t1[..with_trajectory] {
        for &b in &trajectory {
            augmented.push(AugmentedPoint {
                record: i,
                bmi: b,
                x: featurizer.transform_with_bmi(&test[i], b),
                trajectory: true,
            });
        }
    }

    Ok(PreparedTask {
        seed,
        test,
        train_size: train_records.len(),
        threshold_b,
        featurizer,
        model,
        classifier,
        test_x,
        test_labels,
        d_t1,
        augmented,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseRow {
    pub accuracy: f64,
    pub test_positives: usize,
    pub augmented_size: usize,
    pub augmented_positives: usize,
    /// Smallest BMI the base model labels positive in the augmented set.
    pub min_positive_bmi: Option<f64>,
    pub empirical_expansion: f64,
    pub binned_expansion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedRow {
    pub sigma: f64,
    pub n: u64,
    pub alpha: f64,
    pub correct: usize,
    pub abstained: usize,
    pub wrong: usize,
    pub accuracy: f64,
    pub abstention_rate: f64,
    pub error_rate: f64,
    /// Test samples with a positive abstaining prediction.
    pub predicted_positive: usize,
    /// Test samples certified as positive.
    pub certified_positive: usize,
    /// Mean certified radius over the positively certified test samples, in
    /// standardized feature units.
    pub avg_radius: f64,
    /// The same radius along the BMI axis, in BMI units.
    pub avg_radius_bmi: f64,
    pub augmented_positives: usize,
    pub empirical_expansion: f64,
    pub binned_expansion: f64,
    /// Trajectory points certified positive, and their mean radius in BMI units.
    pub trajectory_certified: usize,
    pub trajectory_avg_radius_bmi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramTable {
    /// `base`, or the smoothing setting as `sigma=..,n=..,alpha=..`.
    pub setting: String,
    pub bins: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApePoint {
    pub z: f64,
    /// Predicted label, or `None` on abstention.
    pub label: Option<usize>,
    /// Certified radius for the positive label in BMI units; 0 otherwise.
    pub radius: f64,
}

/// Inference sets of one `D_{t,1}` record under one smoothing setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApeRecord {
    pub setting: String,
    pub record: usize,
    pub original_bmi: f64,
    pub baseline: String,
    pub expanded: String,
    pub points: Vec<ApePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub threshold_b: f64,
    pub bmi_sd: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub d_t1: usize,
    pub base: BaseRow,
    pub rows: Vec<SmoothedRow>,
    pub histograms: Vec<HistogramTable>,
    pub ape: Vec<ApeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationReport {
    /// `ape` for the sigma list, `ablation` for the (N, alpha) grid.
    pub kind: String,
    pub notes: Vec<String>,
    pub config: RecommendationConfig,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone, Copy)]
struct Setting {
    sigma: f64,
    n: u64,
    alpha: f64,
}

impl Setting {
    fn label(&self) -> String {
        setting_label(self.sigma, self.n, self.alpha)
    }
}

/// Name of a smoothing setting in histogram and APE tables.
pub fn setting_label(sigma: f64, n: u64, alpha: f64) -> String {
    format!("sigma={sigma},n={n},alpha={alpha}")
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn base_row(task: &PreparedTask, bin_width: f64) -> (BaseRow, Vec<f64>) {
    let correct = task
        .test_x
        .iter()
        .zip(&task.test_labels)
        .filter(|(x, &y)| task.classifier.classify(x) == y)
        .count();
    let positives: Vec<f64> = task
        .augmented
        .iter()
        .filter(|p| task.classifier.classify(&p.x) == POSITIVE)
        .map(|p| p.bmi)
        .collect();
    let row = BaseRow {
        accuracy: correct as f64 / task.test.len() as f64,
        test_positives: task.d_t1.len(),
        augmented_size: task.augmented.len(),
        augmented_positives: positives.len(),
        min_positive_bmi: positives.iter().copied().reduce(f64::min),
        empirical_expansion: empirical_expansion(task.threshold_b, &positives),
        binned_expansion: binned_expansion(task.threshold_b, &positives, bin_width),
    };
    (row, positives)
}

/// Votes of one point for a fixed (sigma, n).
struct PointVotes {
    predict: Vec<u64>,
    /// Selection and estimation votes, when the point was certified.
    certify: Option<(Vec<u64>, Vec<u64>)>,
}

fn votes(
    model: &FrozenMlp,
    x: &[f64],
    sigma: f64,
    n: u64,
    n0: u64,
    predict_stream: RngStream,
    certify_stream: Option<RngStream>,
) -> Result<PointVotes> {
    let mut s = predict_stream;
    let predict = sample_votes(model, x, n, sigma, &mut s)?;
    let certify = match certify_stream {
        Some(mut c) => {
            let selection = sample_votes(model, x, n0, sigma, &mut c)?;
            Some((selection, sample_votes(model, x, n, sigma, &mut c)?))
        }
        None => None,
    };
    Ok(PointVotes { predict, certify })
}

fn positive_radius(v: &PointVotes, sigma: f64, alpha: f64) -> Result<Option<f64>> {
    let Some((selection, counts)) = &v.certify else {
        return Ok(None);
    };
    Ok(match certify_from_votes(selection, counts, sigma, alpha)? {
        CertifyOutcome::Certified(cert) if cert.label == POSITIVE => Some(cert.radius),
        _ => None,
    })
}

/// Rows for every alpha sharing one (sigma, n). Settings with the same
/// (sigma, n) see identical votes, so the votes are drawn once.
fn smoothed_rows(
    task: &PreparedTask,
    sigma: f64,
    n: u64,
    alphas: &[f64],
    n0: u64,
    bin_width: f64,
) -> Result<Vec<(SmoothedRow, HistogramTable)>> {
    for &alpha in alphas {
        SmoothingParams::new(sigma, n, n0, alpha)?;
    }
    let model = &task.classifier;
    let seed = task.seed;
    let bmi_sd = task.featurizer.bmi.sd;
    let max_alpha = alphas.iter().copied().fold(0.0, f64::max);

    let test_votes: Vec<PointVotes> = task
        .test_x
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let predict = RngStream::new(seed, PREDICT_STREAM).split(i as u64);
            let certify = RngStream::new(seed, CERTIFY_STREAM).split(i as u64);
            votes(model, x, sigma, n, n0, predict, Some(certify))
        })
        .collect::<Result<_>>()?;

    // Trajectory points are certified when some alpha predicts them positive;
    // the largest alpha is the most permissive test.
    let augmented_votes: Vec<PointVotes> = task
        .augmented
        .par_iter()
        .enumerate()
        .map(|(j, p)| {
            let predict = RngStream::new(seed, AUGMENTED_STREAM).split(j as u64);
            let mut v = votes(model, &p.x, sigma, n, n0, predict, None)?;
            if p.trajectory && predict_from_votes(&v.predict, max_alpha) == SmoothedOutcome::Predicted(POSITIVE) {
                let mut c = RngStream::new(seed, TRAJECTORY_CERT_STREAM).split(j as u64);
                let selection = sample_votes(model, &p.x, n0, sigma, &mut c)?;
                v.certify = Some((selection, sample_votes(model, &p.x, n, sigma, &mut c)?));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;

    let total = task.test.len() as f64;
    let mut out = Vec::new();
    for &alpha in alphas {
        let (mut correct, mut abstained, mut wrong, mut predicted_positive) = (0, 0, 0, 0);
        let mut radii = Vec::new();
        for (v, &y) in test_votes.iter().zip(&task.test_labels) {
            match predict_from_votes(&v.predict, alpha) {
                SmoothedOutcome::Abstain => abstained += 1,
                SmoothedOutcome::Predicted(l) => {
                    if l == y {
                        correct += 1;
                    } else {
                        wrong += 1;
                    }
                    if l == POSITIVE {
                        predicted_positive += 1;
                    }
                }
            }
            radii.extend(positive_radius(v, sigma, alpha)?);
        }

        let mut positives = Vec::new();
        let mut trajectory_radii = Vec::new();
        for (v, p) in augmented_votes.iter().zip(&task.augmented) {
            if predict_from_votes(&v.predict, alpha) != SmoothedOutcome::Predicted(POSITIVE) {
                continue;
            }
            positives.push(p.bmi);
            if p.trajectory {
                trajectory_radii.extend(positive_radius(v, sigma, alpha)?.map(|r| r * bmi_sd));
            }
        }

        let avg_radius = mean(&radii);
        let setting = Setting { sigma, n, alpha };
        out.push((
            SmoothedRow {
                sigma,
                n,
                alpha,
                correct,
                abstained,
                wrong,
                accuracy: correct as f64 / total,
                abstention_rate: abstained as f64 / total,
                error_rate: wrong as f64 / total,
                predicted_positive,
                certified_positive: radii.len(),
                avg_radius,
                avg_radius_bmi: avg_radius * bmi_sd,
                augmented_positives: positives.len(),
                empirical_expansion: empirical_expansion(task.threshold_b, &positives),
                binned_expansion: binned_expansion(task.threshold_b, &positives, bin_width),
                trajectory_certified: trajectory_radii.len(),
                trajectory_avg_radius_bmi: mean(&trajectory_radii),
            },
            HistogramTable {
                setting: setting.label(),
                bins: histogram(&positives, task.threshold_b, bin_width),
            },
        ));
    }
    Ok(out)
}

fn ape_record(
    task: &PreparedTask,
    cfg: &RecommendationConfig,
    setting: Setting,
    record: usize,
) -> Result<ApeRecord> {
    let params = SmoothingParams::new(setting.sigma, setting.n, cfg.n0, setting.alpha)?;
    let b = task.threshold_b;
    let grid = ApeGrid::new(b - cfg.ape.half_width, b + cfg.ape.half_width, cfg.ape.step)?;
    let rec = &task.test[record];
    let bmi_sd = task.featurizer.bmi.sd;
    let predict_base = RngStream::new(task.seed, APE_PREDICT_STREAM).split(record as u64);
    let certify_base = RngStream::new(task.seed, APE_CERTIFY_STREAM).split(record as u64);

    let points: Vec<ApePoint> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let z = grid.point(k);
            let x = task.featurizer.transform_with_bmi(rec, z);
            let label = predict_smoothed(&task.classifier, &x, &params, &mut predict_base.split(k as u64))?.label();
            let radius = certify(&task.classifier, &x, &params, &mut certify_base.split(k as u64))?.radius_for(POSITIVE);
            Ok(ApePoint {
                z,
                label,
                radius: radius * bmi_sd,
            })
        })
        .collect::<Result<_>>()?;

    let index = |z: f64| ((z - grid.lo) / grid.step).round() as usize;
    let baseline = baseline_inference_set(|z| points[index(z)].label, &Some(POSITIVE), &grid);
    let expanded = expanded_inference_set(&baseline, |z| points[index(z)].radius, &grid)?;
    Ok(ApeRecord {
        setting: setting.label(),
        record,
        original_bmi: rec.bmi,
        baseline: baseline.to_string(),
        expanded: expanded.to_string(),
        points,
    })
}

fn run_seed(task: &PreparedTask, cfg: &RecommendationConfig, settings: &[Setting]) -> Result<SeedRun> {
    let (base, base_positives) = base_row(task, cfg.histogram_bin_width);
    let mut histograms = vec![HistogramTable {
        setting: "base".to_string(),
        bins: histogram(&base_positives, task.threshold_b, cfg.histogram_bin_width),
    }];
    // group settings by (sigma, n), keeping first-appearance order
    let mut groups: Vec<(f64, u64, Vec<f64>)> = Vec::new();
    for s in settings {
        match groups.iter_mut().find(|g| g.0 == s.sigma && g.1 == s.n) {
            Some(g) => g.2.push(s.alpha),
            None => groups.push((s.sigma, s.n, vec![s.alpha])),
        }
    }
    let mut by_setting = Vec::new();
    for (sigma, n, alphas) in &groups {
        let rows = smoothed_rows(task, *sigma, *n, alphas, cfg.n0, cfg.histogram_bin_width)?;
        by_setting.extend(rows);
    }
    let mut rows = Vec::new();
    let mut ape = Vec::new();
    for &setting in settings {
        let (row, table) = by_setting
            .iter()
            .find(|(r, _)| r.sigma == setting.sigma && r.n == setting.n && r.alpha == setting.alpha)
            .cloned()
            .expect("every setting was evaluated");
        rows.push(row);
        histograms.push(table);
        for &record in task.d_t1.iter().take(cfg.ape.records) {
            ape.push(ape_record(task, cfg, setting, record)?);
        }
    }
    Ok(SeedRun {
        seed: task.seed,
        threshold_b: task.threshold_b,
        bmi_sd: task.featurizer.bmi.sd,
        train_size: task.train_size,
        test_size: task.test.len(),
        d_t1: task.d_t1.len(),
        base,
        rows,
        histograms,
        ape,
    })
}

fn notes(cfg: &RecommendationConfig) -> Vec<String> {
    vec![
        "accuracy counts an abstention as not correct".to_string(),
        "avg_radius is in standardized feature units; *_bmi radii are the same distances along the BMI axis".to_string(),
        format!(
            "inference sets are discretized on a grid of step {}; interval endpoints are grid points",
            cfg.ape.step
        ),
        format!(
            "histogram bins have width {} with edges anchored at the threshold B",
            cfg.histogram_bin_width
        ),
    ]
}

fn run(cfg: &RecommendationConfig, kind: &str, settings: &[Setting]) -> Result<RecommendationReport> {
    cfg.validate()?;
    let runs = cfg
        .seeds
        .iter()
        .map(|&seed| run_seed(&prepare_task(cfg, seed)?, cfg, settings))
        .collect::<Result<_>>()?;
    Ok(RecommendationReport {
        kind: kind.to_string(),
        notes: notes(cfg),
        config: cfg.clone(),
        runs,
    })
}

/// Base row plus one smoothed row per configured sigma, for every seed.
pub fn run_recommendation_experiment(cfg: &RecommendationConfig) -> Result<RecommendationReport> {
    let settings: Vec<Setting> = cfg
        .sigmas
        .iter()
        .map(|&sigma| Setting {
            sigma,
            n: cfg.n,
            alpha: cfg.alpha,
        })
        .collect();
    run(cfg, "ape", &settings)
}

/// Same pipeline at the ablation sigma over the configured (N, alpha) cells.
pub fn run_ablation(cfg: &RecommendationConfig) -> Result<RecommendationReport> {
    let settings: Vec<Setting> = cfg
        .ablation
        .cells
        .iter()
        .map(|c| Setting {
            sigma: cfg.ablation.sigma,
            n: c.n,
            alpha: c.alpha,
        })
        .collect();
    if settings.is_empty() {
        return Err(Error::Config("ablation.cells must not be empty".into()));
    }
    run(cfg, "ablation", &settings)
}
