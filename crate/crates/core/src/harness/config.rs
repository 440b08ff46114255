//! Experiment configuration. Configs are TOML; every field except `seeds` has
//! a default, and the fully resolved config is echoed into each report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TrainConfig;

/// MLP training hyperparameters shared by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l1_lambda: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        ModelSettings {
            hidden: t.hidden,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            l1_lambda: t.l1_lambda,
        }
    }
}

impl ModelSettings {
    pub fn train_config(&self, l1_mask: Vec<bool>, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            l1_lambda: self.l1_lambda,
            l1_mask,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySettings {
    pub step: f64,
    pub count: usize,
    /// How many `D_{t,1}` records get trajectory copies; all of them when unset.
    pub records: Option<usize>,
}

impl Default for TrajectorySettings {
    fn default() -> Self {
        TrajectorySettings {
            step: 0.01,
            count: 500,
            records: None,
        }
    }
}

/// Grid for the per-record inference sets, centred on the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApeSettings {
    pub records: usize,
    pub half_width: f64,
    pub step: f64,
}

impl Default for ApeSettings {
    fn default() -> Self {
        ApeSettings {
            records: 1,
            half_width: 5.0,
            step: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationCell {
    pub n: u64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub sigma: f64,
    pub cells: Vec<AblationCell>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            sigma: 3.0,
            cells: vec![
                AblationCell { n: 1000, alpha: 0.01 },
                AblationCell { n: 100, alpha: 0.01 },
                AblationCell { n: 1000, alpha: 0.99 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommendationConfig {
    pub seeds: Vec<u64>,
    /// Synthetic record count, ignored when `data_csv` is set.
    pub records: usize,
    pub data_csv: Option<PathBuf>,
    pub train_fraction: f64,
    pub percentile: f64,
    pub sigmas: Vec<f64>,
    pub n: u64,
    pub n0: u64,
    pub alpha: f64,
    pub histogram_bin_width: f64,
    pub trajectory: TrajectorySettings,
    pub ape: ApeSettings,
    pub ablation: AblationSettings,
    pub model: ModelSettings,
}

impl Default for RecommendationConfig {
    fn default() -> Self {
        RecommendationConfig {
            seeds: Vec::new(),
            records: 10_000,
            data_csv: None,
            train_fraction: 0.6,
            percentile: 0.9,
            sigmas: vec![1.0, 2.0, 3.0],
            n: 1000,
            n0: 100,
            alpha: 0.01,
            histogram_bin_width: 0.2,
            trajectory: TrajectorySettings::default(),
            ape: ApeSettings::default(),
            ablation: AblationSettings::default(),
            model: ModelSettings::default(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    check(alpha > 0.0 && alpha < 1.0, || format!("alpha={alpha} outside (0, 1)"))
}

fn check_model(m: &ModelSettings) -> Result<()> {
    check(m.hidden > 0 && m.epochs > 0 && m.batch_size > 0, || {
        "model: hidden, epochs and batch_size must be positive".into()
    })?;
    check(m.learning_rate > 0.0 && m.learning_rate.is_finite(), || {
        format!("model: learning_rate={} must be positive", m.learning_rate)
    })?;
    check(m.l1_lambda >= 0.0 && m.l1_lambda.is_finite(), || {
        format!("model: l1_lambda={} must be non-negative", m.l1_lambda)
    })
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    check(!seeds.is_empty(), || "seeds: at least one seed is required".into())
}

impl RecommendationConfig {
    pub fn validate(&self) -> Result<()> {
        check_seeds(&self.seeds)?;
        check(self.data_csv.is_some() || self.records >= 10, || {
            format!("records={} is too small", self.records)
        })?;
        check(self.train_fraction > 0.0 && self.train_fraction < 1.0, || {
            format!("train_fraction={} outside (0, 1)", self.train_fraction)
        })?;
        check(self.percentile > 0.0 && self.percentile < 1.0, || {
            format!("percentile={} outside (0, 1)", self.percentile)
        })?;
        for &s in &self.sigmas {
            check(s > 0.0 && s.is_finite(), || format!("sigma={s} must be positive"))?;
        }
        check(self.n > 0 && self.n0 > 0, || "n and n0 must be positive".into())?;
        check_alpha(self.alpha)?;
        check(self.histogram_bin_width > 0.0, || "histogram_bin_width must be positive".into())?;
        check(self.trajectory.step > 0.0 && self.trajectory.step.is_finite(), || {
            "trajectory.step must be positive".into()
        })?;
        check(self.ape.step > 0.0 && self.ape.half_width > 0.0, || {
            "ape.step and ape.half_width must be positive".into()
        })?;
        check(self.ablation.sigma > 0.0 && self.ablation.sigma.is_finite(), || {
            "ablation.sigma must be positive".into()
        })?;
        check(!self.ablation.cells.is_empty(), || "ablation.cells must not be empty".into())?;
        for c in &self.ablation.cells {
            check(c.n > 0, || "ablation cell n must be positive".into())?;
            check_alpha(c.alpha)?;
        }
        check_model(&self.model)
    }
}

/// Parameters of the toy Gaussian-mixture inversion task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTaskSettings {
    pub classes: usize,
    pub dim: usize,
    /// Radius of the sphere the class centres are drawn on.
    pub center_radius: f64,
    pub cluster_sd: f64,
    pub train_per_class: usize,
    pub heldout_per_class: usize,
    /// Held-out points per class kept for the accuracy set, chosen by target-model confidence.
    pub accuracy_per_class: usize,
    /// Uniform draws from the attack box labeled as an extra "none" class in
    /// each model's training set; 0 disables the extra class.
    pub background: usize,
}

impl Default for ToyTaskSettings {
    fn default() -> Self {
        ToyTaskSettings {
            classes: 10,
            dim: 8,
            center_radius: 3.0,
            cluster_sd: 1.0,
            train_per_class: 200,
            heldout_per_class: 100,
            accuracy_per_class: 10,
            background: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSettings {
    pub probe_count: usize,
    /// Probe radius and step size, as multiples of `cluster_sd`.
    pub probe_radius: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub init_budget: usize,
}

impl Default for AttackSettings {
    fn default() -> Self {
        AttackSettings {
            probe_count: 32,
            probe_radius: 2.0,
            step_size: 0.25,
            max_iters: 200,
            init_budget: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub seeds: Vec<u64>,
    pub targets: usize,
    pub sigmas: Vec<f64>,
    pub votes: Vec<u64>,
    pub task: ToyTaskSettings,
    pub attack: AttackSettings,
    pub target_model: ModelSettings,
    pub evaluator_model: ModelSettings,
}

impl Default for InversionConfig {
    fn default() -> Self {
        let toy_model = |hidden| ModelSettings {
            hidden,
            epochs: 60,
            batch_size: 64,
            learning_rate: 0.05,
            l1_lambda: 0.0,
        };
        InversionConfig {
            seeds: Vec::new(),
            targets: 50,
            sigmas: vec![0.25, 0.5, 0.75, 1.0, 1.25],
            votes: vec![10, 100],
            task: ToyTaskSettings::default(),
            attack: AttackSettings::default(),
            target_model: toy_model(32),
            evaluator_model: toy_model(16),
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        check_seeds(&self.seeds)?;
        check(self.targets > 0, || "targets must be positive".into())?;
        for &s in &self.sigmas {
            check(s >= 0.0 && s.is_finite(), || format!("sigma={s} must be non-negative"))?;
        }
        check(self.votes.iter().all(|&n| n > 0), || "votes must be positive".into())?;
        let t = &self.task;
        check(t.classes >= 2 && t.dim >= 1, || "task: need at least 2 classes and 1 dimension".into())?;
        check(t.center_radius > 0.0 && t.cluster_sd > 0.0, || {
            "task: center_radius and cluster_sd must be positive".into()
        })?;
        check(t.train_per_class > 0 && t.heldout_per_class > 0, || {
            "task: per-class sample counts must be positive".into()
        })?;
        check(t.accuracy_per_class > 0 && t.accuracy_per_class <= t.heldout_per_class, || {
            "task: accuracy_per_class must be in 1..=heldout_per_class".into()
        })?;
        let a = &self.attack;
        check(a.probe_count > 0 && a.max_iters > 0 && a.init_budget > 0, || {
            "attack: probe_count, max_iters and init_budget must be positive".into()
        })?;
        check(a.probe_radius > 0.0 && a.step_size > 0.0, || {
            "attack: probe_radius and step_size must be positive".into()
        })?;
        check_model(&self.target_model)?;
        check_model(&self.evaluator_model)
    }
}

pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))
}

pub fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_toml(&text)
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_mandatory() {
        let cfg: RecommendationConfig = parse_toml("records = 500").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg: RecommendationConfig = parse_toml("seeds = [1]").unwrap();
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse_toml::<RecommendationConfig>("seeds = [1]\nsigmaz = [1.0]").is_err());
        assert!(parse_toml::<InversionConfig>("seeds = [1]\n[attack]\nradius = 1.0").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RecommendationConfig {
            seeds: vec![4, 5],
            ..Default::default()
        };
        let back: RecommendationConfig = parse_toml(&to_toml(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let inv = InversionConfig {
            seeds: vec![1],
            ..Default::default()
        };
        let back: InversionConfig = parse_toml(&to_toml(&inv).unwrap()).unwrap();
        assert_eq!(back, inv);
    }

    #[test]
    fn nested_sections_override_defaults() {
        let cfg: InversionConfig = parse_toml("seeds = [3]\n[attack]\nmax_iters = 7\n").unwrap();
        assert_eq!(cfg.attack.max_iters, 7);
        assert_eq!(cfg.attack.probe_count, 32);
        cfg.validate().unwrap();
    }
}
