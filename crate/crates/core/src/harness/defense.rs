//! Label-only inversion against undefended and smoothed oracles on a toy
//! Gaussian-mixture task.
//!
//! Each attack target keeps its own attack seed and oracle noise stream in
//! every (sigma, N) cell, so cells are compared on common random numbers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{InversionConfig, ModelSettings};
use crate::error::{Error, Result};
use crate::inversion::{evaluate_asr, run_attack, AttackConfig, AttackResult, DomainBox};
use crate::nn::{train, Example, LabeledData, MlpModel};
use crate::numerics::RngStream;
use crate::smoothing::{vote_label, Classifier, FrozenMlp, VoteOracle};

const CENTER_STREAM: u64 = 0x7a_0001;
const TRAIN_STREAM: u64 = 0x7a_0002;
const EVALUATOR_STREAM: u64 = 0x7a_0003;
const HELDOUT_STREAM: u64 = 0x7a_0004;
const ATTACK_STREAM: u64 = 0x7a_0005;
const ORACLE_STREAM: u64 = 0x7a_0006;
const ACCURACY_STREAM: u64 = 0x7a_0007;

/// Trained models and data of the toy task for one seed.
pub struct ToyTask {
    pub seed: u64,
    pub centers: Vec<Vec<f64>>,
    pub target_model: MlpModel,
    pub evaluator_model: MlpModel,
    pub target: FrozenMlp,
    pub evaluator: FrozenMlp,
    pub domain: DomainBox,
    /// Held-out points the target model is most confident about, per class.
    pub accuracy_set: Vec<Example>,
}

fn mixture_sample(centers: &[Vec<f64>], per_class: usize, sd: f64, rng: &mut RngStream) -> Vec<Example> {
    let mut out = Vec::with_capacity(centers.len() * per_class);
    for _ in 0..per_class {
        for (k, c) in centers.iter().enumerate() {
            let x = c.iter().map(|m| m + sd * rng.standard_normal()).collect();
            out.push(Example::new(x, k));
        }
    }
    out
}

fn fit(examples: Vec<Example>, classes: usize, m: &ModelSettings, seed: u64) -> Result<MlpModel> {
    let data = LabeledData::new(examples, classes)?;
    train(&data, &m.train_config(Vec::new(), seed))
}

fn bounding_box(examples: &[Example]) -> Result<DomainBox> {
    let dim = examples[0].x.len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for e in examples {
        for (d, &v) in e.x.iter().enumerate() {
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
    }
    DomainBox::new(lo, hi)
}

pub fn build_toy_task(cfg: &InversionConfig, seed: u64) -> Result<ToyTask> {
    cfg.validate()?;
    let t = &cfg.task;
    let mut rng = RngStream::new(seed, CENTER_STREAM);
    let centers: Vec<Vec<f64>> = (0..t.classes)
        .map(|_| rng.unit_vector(t.dim).into_iter().map(|u| u * t.center_radius).collect())
        .collect();

    let train_set = mixture_sample(&centers, t.train_per_class, t.cluster_sd, &mut RngStream::new(seed, TRAIN_STREAM));
    let evaluator_set =
        mixture_sample(&centers, t.train_per_class, t.cluster_sd, &mut RngStream::new(seed, EVALUATOR_STREAM));
    let heldout = mixture_sample(&centers, t.heldout_per_class, t.cluster_sd, &mut RngStream::new(seed, HELDOUT_STREAM));

    let domain = bounding_box(&train_set)?;
    let with_background = |mut set: Vec<Example>, stream: u64| {
        let mut rng = RngStream::new(seed, stream).split(0xb6);
        for _ in 0..t.background {
            set.push(Example::new(domain.sample(&mut rng), t.classes));
        }
        set
    };
    let classes = t.classes + usize::from(t.background > 0);
    let target_model = fit(with_background(train_set, TRAIN_STREAM), classes, &cfg.target_model, seed)?;
    let evaluator_model = fit(
        with_background(evaluator_set, EVALUATOR_STREAM),
        classes,
        &cfg.evaluator_model,
        seed ^ 0x5eed_e7a1,
    )?;

    let mut accuracy_set = Vec::new();
    for k in 0..t.classes {
        let mut scored: Vec<(f64, &Example)> = heldout
            .iter()
            .filter(|e| e.label == k)
            .map(|e| Ok((target_model.probabilities(&e.x)?[k], e)))
            .collect::<Result<_>>()?;
        // most confident first; ties keep sample order
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        accuracy_set.extend(scored.into_iter().take(t.accuracy_per_class).map(|(_, e)| e.clone()));
    }

    Ok(ToyTask {
        seed,
        centers,
        target: FrozenMlp::from(&target_model),
        evaluator: FrozenMlp::from(&evaluator_model),
        target_model,
        evaluator_model,
        domain,
        accuracy_set,
    })
}

/// Attack parameters for target `index`; the probe geometry scales with the cluster spread.
pub fn attack_config(cfg: &InversionConfig, seed: u64, index: usize) -> AttackConfig {
    let a = &cfg.attack;
    AttackConfig {
        target_class: index % cfg.task.classes,
        probe_count: a.probe_count,
        probe_radius: a.probe_radius * cfg.task.cluster_sd,
        step_size: a.step_size * cfg.task.cluster_sd,
        max_iters: a.max_iters,
        init_budget: a.init_budget,
        seed: RngStream::new(seed, ATTACK_STREAM).split(index as u64).stream_id(),
    }
}

/// One attack against the target model, undefended when `sigma == 0`.
pub fn attack_one(task: &ToyTask, cfg: &InversionConfig, index: usize, sigma: f64, votes: u64) -> Result<AttackResult> {
    let attack = attack_config(cfg, task.seed, index);
    let stream = RngStream::new(task.seed, ORACLE_STREAM).split(index as u64);
    let mut oracle = VoteOracle::new(&task.target, sigma, votes, stream)?;
    run_attack(&mut |x: &[f64]| oracle.query(x), &attack, &task.domain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionRow {
    pub sigma: f64,
    /// Votes per query; `None` for the undefended baseline.
    pub votes: Option<u64>,
    pub asr: f64,
    pub accuracy: f64,
    pub mean_queries: f64,
    /// Attacks that stopped because a whole probe round came back as target.
    pub converged: usize,
    pub no_init: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionRun {
    pub seed: u64,
    pub evaluator_accuracy: f64,
    pub baseline: InversionRow,
    pub cells: Vec<InversionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub notes: Vec<String>,
    pub config: InversionConfig,
    pub runs: Vec<InversionRun>,
}

fn row(
    task: &ToyTask,
    cfg: &InversionConfig,
    sigma: f64,
    votes: Option<u64>,
    targets: &[usize],
) -> Result<InversionRow> {
    let n = votes.unwrap_or(1);
    let results: Vec<AttackResult> = (0..cfg.targets)
        .into_par_iter()
        .map(|i| attack_one(task, cfg, i, sigma, n))
        .collect::<Result<_>>()?;
    let evaluator = |x: &[f64]| task.evaluator.classify(x);
    let asr = evaluate_asr(&results, &evaluator, targets)?;

    let correct = task
        .accuracy_set
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            if sigma == 0.0 {
                return Ok(task.target.classify(&e.x) == e.label);
            }
            let mut s = RngStream::new(task.seed, ACCURACY_STREAM).split(i as u64);
            Ok(vote_label(&task.target, &e.x, n, sigma, &mut s)? == e.label)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&c| c)
        .count();

    Ok(InversionRow {
        sigma,
        votes,
        asr,
        accuracy: correct as f64 / task.accuracy_set.len() as f64,
        mean_queries: results.iter().map(|r| r.queries_used as f64).sum::<f64>() / results.len() as f64,
        converged: results.iter().filter(|r| r.success).count(),
        no_init: results.iter().filter(|r| r.final_point.is_empty()).count(),
    })
}

fn run_seed(cfg: &InversionConfig, seed: u64) -> Result<InversionRun> {
    let task = build_toy_task(cfg, seed)?;
    let targets: Vec<usize> = (0..cfg.targets).map(|i| i % cfg.task.classes).collect();
    let baseline = row(&task, cfg, 0.0, None, &targets)?;
    let mut cells = Vec::new();
    for &votes in &cfg.votes {
        for &sigma in &cfg.sigmas {
            cells.push(row(&task, cfg, sigma, Some(votes), &targets)?);
        }
    }
    let heldout_correct = task
        .accuracy_set
        .iter()
        .filter(|e| task.evaluator.classify(&e.x) == e.label)
        .count();
    Ok(InversionRun {
        seed,
        evaluator_accuracy: heldout_correct as f64 / task.accuracy_set.len() as f64,
        baseline,
        cells,
    })
}

/// Baseline and every (sigma, N) cell for each seed.
pub fn run_inversion_experiment(cfg: &InversionConfig) -> Result<InversionReport> {
    cfg.validate()?;
    if cfg.votes.is_empty() && !cfg.sigmas.is_empty() {
        return Err(Error::Config("votes must not be empty when sigmas are given".into()));
    }
    let runs = cfg
        .seeds
        .iter()
        .map(|&seed| run_seed(cfg, seed))
        .collect::<Result<_>>()?;
    Ok(InversionReport {
        notes: vec![
            "asr is the fraction of attacks whose final point the evaluator model assigns to the target class"
                .to_string(),
            format!(
                "accuracy is measured on a fixed held-out set: the {} held-out points per class the target model is most confident about",
                cfg.task.accuracy_per_class
            ),
            "defended oracles return the plurality label of the votes and never abstain".to_string(),
            format!(
                "both models also learn a \"none\" class from {} uniform draws over the attack box",
                cfg.task.background
            ),
        ],
        config: cfg.clone(),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> InversionConfig {
        let mut cfg = InversionConfig {
            seeds: vec![2],
            targets: 6,
            sigmas: vec![0.0],
            votes: vec![5],
            ..Default::default()
        };
        cfg.task.train_per_class = 30;
        cfg.task.heldout_per_class = 10;
        cfg.task.accuracy_per_class = 3;
        cfg.attack.max_iters = 20;
        cfg.target_model.epochs = 5;
        cfg.evaluator_model.epochs = 5;
        cfg
    }

    #[test]
    fn zero_sigma_cells_equal_baseline() {
        let report = run_inversion_experiment(&small()).unwrap();
        let run = &report.runs[0];
        let cell = &run.cells[0];
        assert_eq!(cell.asr, run.baseline.asr);
        assert_eq!(cell.accuracy, run.baseline.accuracy);
        assert_eq!(cell.mean_queries, run.baseline.mean_queries);
    }

    #[test]
    fn accuracy_set_is_per_class() {
        let cfg = small();
        let task = build_toy_task(&cfg, 2).unwrap();
        assert_eq!(task.accuracy_set.len(), 3 * cfg.task.classes);
        for k in 0..cfg.task.classes {
            assert_eq!(task.accuracy_set.iter().filter(|e| e.label == k).count(), 3);
        }
    }

    #[test]
    fn single_vote_matches_one_noisy_base_label() {
        let cfg = small();
        let task = build_toy_task(&cfg, 2).unwrap();
        let x = task.centers[0].clone();
        let stream = RngStream::new(9, 9);
        let mut oracle = VoteOracle::new(&task.target, 0.5, 1, stream.clone()).unwrap();
        let mut s = stream;
        let mut noisy = x.clone();
        for _ in 0..20 {
            for (n, c) in noisy.iter_mut().zip(&x) {
                *n = c + 0.5 * s.standard_normal();
            }
            assert_eq!(oracle.query(&x), task.target.classify(&noisy));
        }
    }
}
