//! Label-only, black-box model inversion by boundary repulsion.
//!
//! The attacker sees nothing but labels. It starts from a point the oracle
//! assigns to the target class. It probes a small sphere around the current
//! iterate and steps away from the probes that came back with another label.
//! It stops once a whole probe round is labeled target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

pub const NO_INIT: &str = "no-init";
pub const MAX_ITERS: &str = "max-iters";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::domain("domain box: bounds must be non-empty and equal length"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::domain("domain box: need lo < hi in every dimension"));
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| a + (b - a) * rng.uniform())
            .collect()
    }

    pub fn clip(&self, x: &mut [f64]) {
        for ((v, a), b) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*a, *b);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub target_class: usize,
    /// Sphere probes per step.
    pub probe_count: usize,
    pub probe_radius: f64,
    pub step_size: f64,
    pub max_iters: usize,
    /// Uniform draws allowed when looking for a target-labeled start.
    pub init_budget: usize,
    pub seed: u64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probe_count == 0 || self.max_iters == 0 || self.init_budget == 0 {
            return Err(Error::domain("attack: probe_count, max_iters and init_budget must be at least 1"));
        }
        if !(self.probe_radius > 0.0) || !(self.step_size > 0.0) {
            return Err(Error::domain("attack: probe_radius and step_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitOutcome {
    pub point: Option<Vec<f64>>,
    pub queries: usize,
}

/// First uniform draw from `domain` that the oracle labels `target`.
pub fn find_initial_point(
    oracle: &mut dyn FnMut(&[f64]) -> usize,
    target: usize,
    budget: usize,
    sampler: &mut RngStream,
    domain: &DomainBox,
) -> InitOutcome {
    for draw in 1..=budget {
        let x = domain.sample(sampler);
        if oracle(&x) == target {
            return InitOutcome {
                point: Some(x),
                queries: draw,
            };
        }
    }
    InitOutcome {
        point: None,
        queries: budget,
    }
}

/// Unit step direction away from non-target probes, or `None` when every
/// probe came back as `target`.
///
/// If no probe is labeled target the mean of the probe directions is close to
/// zero by symmetry, so a fresh random unit direction is returned instead.
pub fn estimate_repulsion_direction(
    oracle: &mut dyn FnMut(&[f64]) -> usize,
    x: &[f64],
    target: usize,
    cfg: &AttackConfig,
    stream: &mut RngStream,
) -> Option<Vec<f64>> {
    let dim = x.len();
    let mut repel = vec![0.0; dim];
    let mut non_target = 0usize;
    let mut probe = vec![0.0; dim];
    for _ in 0..cfg.probe_count {
        let u = stream.unit_vector(dim);
        for ((p, xi), ui) in probe.iter_mut().zip(x).zip(&u) {
            *p = xi + cfg.probe_radius * ui;
        }
        if oracle(&probe) != target {
            non_target += 1;
            for (r, ui) in repel.iter_mut().zip(&u) {
                *r += ui;
            }
        }
    }
    if non_target == 0 {
        return None;
    }
    let norm = repel.iter().map(|r| r * r).sum::<f64>().sqrt();
    if non_target == cfg.probe_count || norm == 0.0 {
        return Some(stream.unit_vector(dim));
    }
    Some(repel.iter().map(|r| -r / norm).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub target: usize,
    /// The attack converged: a full probe round came back as `target`.
    pub success: bool,
    /// Last iterate; empty when no starting point was found.
    pub final_point: Vec<f64>,
    pub queries_used: usize,
    pub iterations: usize,
    pub path: Vec<Vec<f64>>,
    pub abandoned_reason: Option<String>,
}

/// Runs one targeted attack against a label-only oracle.
pub fn run_attack(
    oracle: &mut dyn FnMut(&[f64]) -> usize,
    cfg: &AttackConfig,
    domain: &DomainBox,
) -> Result<AttackResult> {
    cfg.validate()?;
    let mut init_rng = RngStream::new(cfg.seed, 0);
    let mut probe_rng = RngStream::new(cfg.seed, 1);
    let init = find_initial_point(oracle, cfg.target_class, cfg.init_budget, &mut init_rng, domain);
    let Some(mut x) = init.point else {
        return Ok(AttackResult {
            target: cfg.target_class,
            success: false,
            final_point: Vec::new(),
            queries_used: init.queries,
            iterations: 0,
            path: Vec::new(),
            abandoned_reason: Some(NO_INIT.to_string()),
        });
    };
    if x.len() != domain.dim() {
        return Err(Error::domain("attack: oracle dimension differs from domain box"));
    }

    let mut queries = init.queries;
    let mut path = vec![x.clone()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        queries += cfg.probe_count;
        match estimate_repulsion_direction(oracle, &x, cfg.target_class, cfg, &mut probe_rng) {
            None => {
                converged = true;
                break;
            }
            Some(dir) => {
                for (xi, d) in x.iter_mut().zip(&dir) {
                    *xi += cfg.step_size * d;
                }
                domain.clip(&mut x);
                path.push(x.clone());
            }
        }
    }
    Ok(AttackResult {
        target: cfg.target_class,
        success: converged,
        final_point: x,
        queries_used: queries,
        iterations,
        path,
        abandoned_reason: (!converged).then(|| MAX_ITERS.to_string()),
    })
}

/// Fraction of runs whose final point the evaluator assigns to the intended
/// target. Runs without a starting point count as failures.
pub fn evaluate_asr(
    results: &[AttackResult],
    evaluator: &dyn Fn(&[f64]) -> usize,
    targets: &[usize],
) -> Result<f64> {
    if results.len() != targets.len() {
        return Err(Error::domain(format!(
            "evaluate_asr: {} results but {} targets",
            results.len(),
            targets.len()
        )));
    }
    if results.is_empty() {
        return Err(Error::domain("evaluate_asr: no attack results"));
    }
    let hits = results
        .iter()
        .zip(targets)
        .filter(|(r, &t)| !r.final_point.is_empty() && evaluator(&r.final_point) == t)
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// Attack trace as delimited text: `iteration,x0,..,x{d-1},queries`.
///
/// Rows are the iterates; the query column is the cumulative count after the
/// probe round that produced the row (initial draws for row 0).
pub fn trace_csv(result: &AttackResult, probe_count: usize) -> String {
    let dim = result.path.first().map_or(0, Vec::len);
    let mut out = String::from("iteration");
    for i in 0..dim {
        out.push_str(&format!(",x{i}"));
    }
    out.push_str(",queries\n");
    let init_queries = result.queries_used - result.iterations * probe_count;
    for (it, p) in result.path.iter().enumerate() {
        out.push_str(&it.to_string());
        for v in p {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", init_queries + it * probe_count));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(target: usize) -> AttackConfig {
        AttackConfig {
            target_class: target,
            probe_count: 16,
            probe_radius: 0.1,
            step_size: 0.1,
            max_iters: 50,
            init_budget: 20,
            seed: 1,
        }
    }

    fn square() -> DomainBox {
        DomainBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn constant_target_accepts_first_draw() {
        let mut oracle = |_: &[f64]| 3;
        let out = find_initial_point(&mut oracle, 3, 10, &mut RngStream::new(0, 0), &square());
        assert_eq!(out.queries, 1);
        assert!(out.point.is_some());
    }

    #[test]
    fn unreachable_target_uses_budget() {
        let mut oracle = |_: &[f64]| 0;
        let out = find_initial_point(&mut oracle, 1, 17, &mut RngStream::new(0, 0), &square());
        assert_eq!(out.queries, 17);
        assert!(out.point.is_none());
    }

    #[test]
    fn interior_point_has_no_direction() {
        let mut oracle = |_: &[f64]| 1;
        assert!(estimate_repulsion_direction(&mut oracle, &[0.0, 0.0], 1, &cfg(1), &mut RngStream::new(0, 0)).is_none());
    }

    #[test]
    fn all_non_target_gives_random_unit_direction() {
        let mut oracle = |_: &[f64]| 0;
        let d = estimate_repulsion_direction(&mut oracle, &[0.0, 0.0], 1, &cfg(1), &mut RngStream::new(0, 0)).unwrap();
        assert!((d.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_space_direction_points_inward() {
        let mut oracle = |x: &[f64]| usize::from(x[0] > 0.0);
        let c = AttackConfig {
            probe_count: 10_000,
            ..cfg(1)
        };
        let d = estimate_repulsion_direction(&mut oracle, &[0.0, 0.0], 1, &c, &mut RngStream::new(4, 0)).unwrap();
        let angle = d[0].clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle < 5.0, "angle {angle}");
    }

    #[test]
    fn constant_oracle_converges_immediately() {
        let mut oracle = |_: &[f64]| 2;
        let r = run_attack(&mut oracle, &cfg(2), &square()).unwrap();
        assert!(r.success);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.path.len(), 1);
        assert_eq!(r.queries_used, 1 + 16);
    }

    #[test]
    fn missing_start_is_reported() {
        let mut oracle = |_: &[f64]| 0;
        let r = run_attack(&mut oracle, &cfg(1), &square()).unwrap();
        assert!(!r.success);
        assert_eq!(r.abandoned_reason.as_deref(), Some(NO_INIT));
        assert_eq!(r.queries_used, 20);
    }

    #[test]
    fn query_accounting_is_exact() {
        let mut calls = 0usize;
        let mut oracle = |x: &[f64]| {
            calls += 1;
            usize::from(x[0] + x[1] > 0.5)
        };
        let r = run_attack(&mut oracle, &cfg(1), &square()).unwrap();
        let init_draws = r.queries_used - 16 * r.iterations;
        assert!((1..=20).contains(&init_draws));
        assert_eq!(calls, r.queries_used);
        assert!(r.queries_used >= r.path.len());
    }

    #[test]
    fn asr_examples() {
        let mk = |p: Vec<f64>| AttackResult {
            target: 0,
            success: true,
            final_point: p,
            queries_used: 1,
            iterations: 0,
            path: vec![],
            abandoned_reason: None,
        };
        let results: Vec<_> = (0..100).map(|i| mk(vec![i as f64])).collect();
        let targets = vec![1; 100];
        let evaluator = |x: &[f64]| usize::from(x[0] < 73.0);
        assert!((evaluate_asr(&results, &evaluator, &targets).unwrap() - 0.73).abs() < 1e-12);
        assert!(evaluate_asr(&[], &evaluator, &[]).is_err());
        assert!(evaluate_asr(&results[..2], &evaluator, &targets[..1]).is_err());
        let empty = vec![mk(vec![])];
        assert_eq!(evaluate_asr(&empty, &|_: &[f64]| 1, &[1]).unwrap(), 0.0);
    }

    #[test]
    fn trace_has_one_row_per_iterate() {
        let mut oracle = |x: &[f64]| usize::from(x[0] > 0.3);
        let r = run_attack(&mut oracle, &cfg(1), &square()).unwrap();
        let csv = trace_csv(&r, 16);
        assert_eq!(csv.lines().count(), r.path.len() + 1);
        assert!(csv.starts_with("iteration,x0,x1,queries\n"));
    }
}
