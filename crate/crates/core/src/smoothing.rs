//! The smoothed classifier `g(x) = argmax_k P(f(x + eps) = k)` with
//! `eps ~ N(0, sigma^2 I)`, estimated by Monte Carlo.
//!
//! Three query modes are provided. [`predict_smoothed`] answers or abstains
//! depending on a binomial test. [`certify`] returns a label together with an
//! L2 radius inside which the smoothed label is constant with probability at
//! least `1 - alpha`. [`vote_label`] always returns the plurality label.
//!
//! Ties between classes are always broken toward the smallest class index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::numerics::{binom_two_sided_pvalue, clopper_pearson_lower, inv_cdf, RngStream};

/// A label-producing base classifier `f`.
pub trait Classifier: Sync {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Label of `x`. Callers guarantee `x.len() == self.input_dim()`.
    fn classify(&self, x: &[f64]) -> usize;
}

impl Classifier for MlpModel {
    fn input_dim(&self) -> usize {
        MlpModel::input_dim(self)
    }

    fn num_classes(&self) -> usize {
        MlpModel::num_classes(self)
    }

    fn classify(&self, x: &[f64]) -> usize {
        const STACK: usize = 256;
        let (h, k) = (self.hidden_dim(), MlpModel::num_classes(self));
        if h <= STACK && k <= STACK {
            let mut hidden = [0.0; STACK];
            let mut logits = [0.0; STACK];
            self.forward_into(x, &mut hidden[..h], &mut logits[..k]);
            crate::nn::argmax(&logits[..k])
        } else {
            let mut hidden = vec![0.0; h];
            let mut logits = vec![0.0; k];
            self.forward_into(x, &mut hidden, &mut logits);
            crate::nn::argmax(&logits)
        }
    }
}

/// Inference-only copy of an [`MlpModel`] with the first layer stored column
/// by column. Each input then updates all hidden units with one contiguous
/// multiply-add, which vectorizes well in the Monte Carlo loops.
/// Labels are identical to the source model up to floating-point summation order.
#[derive(Debug, Clone)]
pub struct FrozenMlp {
    inputs: usize,
    w1_cols: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl From<&MlpModel> for FrozenMlp {
    fn from(m: &MlpModel) -> Self {
        let (inputs, hidden) = (m.input_dim(), m.hidden_dim());
        let mut w1_cols = vec![0.0; inputs * hidden];
        for h in 0..hidden {
            for i in 0..inputs {
                w1_cols[i * hidden + h] = m.w1.get(h, i);
            }
        }
        FrozenMlp {
            inputs,
            w1_cols,
            b1: m.b1.clone(),
            w2: m.w2.as_slice().to_vec(),
            b2: m.b2.clone(),
        }
    }
}

impl FrozenMlp {
    #[inline(always)]
    fn classify_with(&self, x: &[f64], hidden: &mut [f64]) -> usize {
        hidden.copy_from_slice(&self.b1);
        for (xi, col) in x.iter().zip(self.w1_cols.chunks_exact(self.b1.len())) {
            for (h, w) in hidden.iter_mut().zip(col) {
                *h += w * xi;
            }
        }
        for h in hidden.iter_mut() {
            *h = h.max(0.0);
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (c, (row, b)) in self.w2.chunks_exact(self.b1.len()).zip(&self.b2).enumerate() {
            // eight partial sums instead of one serial chain
            let mut lanes = [0.0; 8];
            let (rows, hs) = (row.chunks_exact(8), hidden.chunks_exact(8));
            let tail: f64 = rows.remainder().iter().zip(hs.remainder()).map(|(w, h)| w * h).sum();
            for (w, h) in rows.zip(hs) {
                for k in 0..8 {
                    lanes[k] += w[k] * h[k];
                }
            }
            let logit = b + lanes.iter().sum::<f64>() + tail;
            if logit > best.1 {
                best = (c, logit);
            }
        }
        best.0
    }

    // Same arithmetic compiled for 256-bit vectors. Multiplies and adds stay
    // separate (no fused multiply-add), so labels match the portable path.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn classify_avx2(&self, x: &[f64], hidden: &mut [f64]) -> usize {
        self.classify_with(x, hidden)
    }

    fn dispatch(&self, x: &[f64], hidden: &mut [f64]) -> usize {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { self.classify_avx2(x, hidden) };
        }
        self.classify_with(x, hidden)
    }
}

impl Classifier for FrozenMlp {
    fn input_dim(&self) -> usize {
        self.inputs
    }

    fn num_classes(&self) -> usize {
        self.b2.len()
    }

    fn classify(&self, x: &[f64]) -> usize {
        const STACK: usize = 256;
        let h = self.b1.len();
        if h <= STACK {
            let mut hidden = [0.0; STACK];
            self.dispatch(x, &mut hidden[..h])
        } else {
            self.dispatch(x, &mut vec![0.0; h])
        }
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn classify(&self, x: &[f64]) -> usize {
        (**self).classify(x)
    }
}

/// Adapts a closure into a [`Classifier`].
pub struct FnClassifier<F> {
    dim: usize,
    classes: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> usize + Sync> FnClassifier<F> {
    pub fn new(dim: usize, classes: usize, f: F) -> Self {
        FnClassifier { dim, classes, f }
    }
}

impl<F: Fn(&[f64]) -> usize + Sync> Classifier for FnClassifier<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn classify(&self, x: &[f64]) -> usize {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    /// Gaussian noise scale.
    pub sigma: f64,
    /// Monte Carlo samples for prediction and for the certification bound.
    pub n: u64,
    /// Class-selection samples drawn before the certification bound.
    pub n0: u64,
    /// Failure probability.
    pub alpha: f64,
}

impl SmoothingParams {
    pub fn new(sigma: f64, n: u64, n0: u64, alpha: f64) -> Result<Self> {
        let p = SmoothingParams { sigma, n, n0, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::domain(format!("smoothing: sigma must be positive, got {}", self.sigma)));
        }
        if self.n == 0 || self.n0 == 0 {
            return Err(Error::domain("smoothing: n and n0 must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain(format!("smoothing: alpha={} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SmoothedOutcome {
    Predicted(usize),
    Abstain,
}

impl SmoothedOutcome {
    pub fn label(&self) -> Option<usize> {
        match self {
            SmoothedOutcome::Predicted(l) => Some(*l),
            SmoothedOutcome::Abstain => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub label: usize,
    pub radius: f64,
    pub alpha: f64,
    pub pa_lower: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CertifyOutcome {
    Certified(Certificate),
    Abstain,
}

impl CertifyOutcome {
    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            CertifyOutcome::Certified(c) => Some(c),
            CertifyOutcome::Abstain => None,
        }
    }

    /// Radius of the certificate if it certifies `label`, else 0.
    pub fn radius_for(&self, label: usize) -> f64 {
        match self {
            CertifyOutcome::Certified(c) if c.label == label => c.radius,
            _ => 0.0,
        }
    }
}

fn check_point<C: Classifier + ?Sized>(base: &C, x: &[f64]) -> Result<()> {
    if x.len() != base.input_dim() {
        return Err(Error::domain(format!(
            "point has {} coordinates, classifier expects {}",
            x.len(),
            base.input_dim()
        )));
    }
    Ok(())
}

/// Base-classifier labels of `m` noisy copies of `x`, tallied per class.
pub fn sample_votes<C: Classifier + ?Sized>(
    base: &C,
    x: &[f64],
    m: u64,
    sigma: f64,
    stream: &mut RngStream,
) -> Result<Vec<u64>> {
    if m == 0 {
        return Err(Error::domain("sample_votes: m must be at least 1"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!("sample_votes: invalid sigma {sigma}")));
    }
    check_point(base, x)?;
    let mut counts = vec![0u64; base.num_classes()];
    if sigma == 0.0 {
        counts[base.classify(x)] = m;
        return Ok(counts);
    }
    let mut noisy = vec![0.0; x.len()];
    for _ in 0..m {
        for (out, xi) in noisy.iter_mut().zip(x) {
            *out = xi + sigma * stream.standard_normal();
        }
        counts[base.classify(&noisy)] += 1;
    }
    Ok(counts)
}

/// `(top class, its count, runner-up count)`.
fn top_two(counts: &[u64]) -> (usize, u64, u64) {
    let mut top = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[top] {
            top = i;
        }
    }
    let runner_up = counts
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != top)
        .map(|(_, &c)| c)
        .max()
        .unwrap_or(0);
    (top, counts[top], runner_up)
}

/// Abstaining prediction: answers only when the top class beats the runner-up
/// under an exact two-sided binomial test at level `alpha`.
pub fn predict_smoothed<C: Classifier + ?Sized>(
    base: &C,
    x: &[f64],
    params: &SmoothingParams,
    stream: &mut RngStream,
) -> Result<SmoothedOutcome> {
    params.validate()?;
    let counts = sample_votes(base, x, params.n, params.sigma, stream)?;
    Ok(predict_from_votes(&counts, params.alpha))
}

/// The abstaining decision on already collected vote counts.
pub fn predict_from_votes(counts: &[u64], alpha: f64) -> SmoothedOutcome {
    let (top, n_a, n_b) = top_two(counts);
    let p = binom_two_sided_pvalue(n_a, n_a + n_b).expect("n_a + n_b >= 1 and n_a <= n_a + n_b");
    if p <= alpha {
        SmoothedOutcome::Predicted(top)
    } else {
        SmoothedOutcome::Abstain
    }
}

/// Certified prediction with an L2 robustness radius.
///
/// The class is guessed from `n0` votes; `n` fresh votes then bound its
/// probability from below. The runner-up bound is taken as `1 - pa_lower`.
pub fn certify<C: Classifier + ?Sized>(
    base: &C,
    x: &[f64],
    params: &SmoothingParams,
    stream: &mut RngStream,
) -> Result<CertifyOutcome> {
    params.validate()?;
    let selection = sample_votes(base, x, params.n0, params.sigma, stream)?;
    let counts = sample_votes(base, x, params.n, params.sigma, stream)?;
    certify_from_votes(&selection, &counts, params.sigma, params.alpha)
}

/// Certification on already collected selection and estimation votes.
pub fn certify_from_votes(selection: &[u64], counts: &[u64], sigma: f64, alpha: f64) -> Result<CertifyOutcome> {
    if selection.len() != counts.len() || counts.is_empty() {
        return Err(Error::domain("certify: vote vectors must be non-empty and equally long"));
    }
    let (guess, _, _) = top_two(selection);
    let n = counts.iter().sum();
    let pa_lower = clopper_pearson_lower(counts[guess], n, alpha)?;
    if pa_lower <= 0.5 {
        return Ok(CertifyOutcome::Abstain);
    }
    let radius = radius_from_bounds(sigma, pa_lower, 1.0 - pa_lower)?;
    Ok(CertifyOutcome::Certified(Certificate {
        label: guess,
        radius,
        alpha,
        pa_lower,
    }))
}

/// `sigma / 2 * (inv_cdf(pa_lower) - inv_cdf(pb_upper))`.
pub fn radius_from_bounds(sigma: f64, pa_lower: f64, pb_upper: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!("radius_from_bounds: sigma must be positive, got {sigma}")));
    }
    for (name, p) in [("pa_lower", pa_lower), ("pb_upper", pb_upper)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("radius_from_bounds: {name}={p} outside (0, 1)")));
        }
    }
    if pa_lower < pb_upper {
        return Err(Error::domain(format!(
            "radius_from_bounds: pa_lower={pa_lower} below pb_upper={pb_upper}"
        )));
    }
    Ok(sigma / 2.0 * (inv_cdf(pa_lower) - inv_cdf(pb_upper)))
}

/// Plurality label of `m` noisy votes, never abstaining.
pub fn vote_label<C: Classifier + ?Sized>(
    base: &C,
    x: &[f64],
    m: u64,
    sigma: f64,
    stream: &mut RngStream,
) -> Result<usize> {
    let counts = sample_votes(base, x, m, sigma, stream)?;
    Ok(top_two(&counts).0)
}

/// Label-only query interface to the smoothed classifier under the
/// always-return-a-label protocol. Each query consumes fresh noise from the
/// oracle's own stream.
pub struct VoteOracle<'a, C: Classifier + ?Sized> {
    base: &'a C,
    sigma: f64,
    votes: u64,
    stream: RngStream,
    noisy: Vec<f64>,
    counts: Vec<u64>,
}

impl<'a, C: Classifier + ?Sized> VoteOracle<'a, C> {
    pub fn new(base: &'a C, sigma: f64, votes: u64, stream: RngStream) -> Result<Self> {
        if votes == 0 {
            return Err(Error::domain("vote oracle: votes must be at least 1"));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::domain(format!("vote oracle: invalid sigma {sigma}")));
        }
        Ok(VoteOracle {
            base,
            sigma,
            votes,
            stream,
            noisy: vec![0.0; base.input_dim()],
            counts: vec![0; base.num_classes()],
        })
    }

    pub fn query(&mut self, x: &[f64]) -> usize {
        if self.sigma == 0.0 {
            return self.base.classify(x);
        }
        self.counts.fill(0);
        for _ in 0..self.votes {
            for (out, xi) in self.noisy.iter_mut().zip(x) {
                *out = xi + self.sigma * self.stream.standard_normal();
            }
            self.counts[self.base.classify(&self.noisy)] += 1;
        }
        top_two(&self.counts).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(class: usize) -> FnClassifier<impl Fn(&[f64]) -> usize + Sync> {
        FnClassifier::new(2, 3, move |_: &[f64]| class)
    }

    fn threshold() -> FnClassifier<impl Fn(&[f64]) -> usize + Sync> {
        FnClassifier::new(1, 2, |x: &[f64]| usize::from(x[0] >= 0.0))
    }

    #[test]
    fn constant_base_gets_every_vote() {
        let mut s = RngStream::new(1, 1);
        let votes = sample_votes(&constant(2), &[0.0, 1.0], 50, 1.0, &mut s).unwrap();
        assert_eq!(votes, vec![0, 0, 50]);
    }

    #[test]
    fn zero_sigma_votes_follow_base() {
        let mut s = RngStream::new(1, 1);
        let votes = sample_votes(&threshold(), &[0.3], 20, 0.0, &mut s).unwrap();
        assert_eq!(votes, vec![0, 20]);
        assert_eq!(vote_label(&threshold(), &[-0.3], 7, 0.0, &mut s).unwrap(), 0);
    }

    #[test]
    fn zero_votes_rejected() {
        let mut s = RngStream::new(1, 1);
        assert!(sample_votes(&threshold(), &[0.0], 0, 1.0, &mut s).is_err());
        assert!(sample_votes(&threshold(), &[0.0, 1.0], 3, 1.0, &mut s).is_err());
    }

    #[test]
    fn symmetric_threshold_splits_votes() {
        let mut s = RngStream::new(4, 0);
        let votes = sample_votes(&threshold(), &[0.0], 10_000, 1.0, &mut s).unwrap();
        let frac = votes[1] as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn constant_base_is_predicted() {
        let params = SmoothingParams::new(1.0, 100, 100, 0.01).unwrap();
        let mut s = RngStream::new(2, 0);
        let out = predict_smoothed(&constant(1), &[0.0, 0.0], &params, &mut s).unwrap();
        assert_eq!(out, SmoothedOutcome::Predicted(1));
    }

    #[test]
    fn balanced_votes_abstain() {
        assert_eq!(predict_from_votes(&[50, 50], 0.01), SmoothedOutcome::Abstain);
        assert_eq!(predict_from_votes(&[0, 100], 0.01), SmoothedOutcome::Predicted(1));
        // tie goes to the smaller index but still abstains
        assert_eq!(predict_from_votes(&[3, 3, 0], 0.99), SmoothedOutcome::Abstain);
    }

    #[test]
    fn unanimous_certificate_matches_closed_form() {
        let params = SmoothingParams::new(1.0, 1000, 100, 0.001).unwrap();
        let mut s = RngStream::new(3, 0);
        let out = certify(&constant(0), &[0.0, 0.0], &params, &mut s).unwrap();
        let cert = out.certificate().copied().unwrap();
        assert_eq!(cert.label, 0);
        let pa = 0.001f64.powf(1.0 / 1000.0);
        assert!((cert.pa_lower - pa).abs() < 1e-12);
        assert!((cert.pa_lower - 0.993116).abs() < 1e-6);
        // Phi^-1(0.0.9931160484) = 2.4632626 (mpmath)
        assert!((cert.radius - 2.463_262_6).abs() < 1e-6, "{}", cert.radius);
    }

    #[test]
    fn radius_is_linear_in_sigma() {
        let p1 = SmoothingParams::new(1.0, 500, 50, 0.01).unwrap();
        let p2 = SmoothingParams { sigma: 2.0, ..p1 };
        let r1 = certify(&constant(1), &[0.0, 0.0], &p1, &mut RngStream::new(1, 0)).unwrap();
        let r2 = certify(&constant(1), &[0.0, 0.0], &p2, &mut RngStream::new(1, 0)).unwrap();
        let (c1, c2) = (r1.certificate().unwrap(), r2.certificate().unwrap());
        assert_eq!(c1.pa_lower, c2.pa_lower);
        assert!((c2.radius - 2.0 * c1.radius).abs() < 1e-12);
    }

    #[test]
    fn half_votes_abstain_on_certify() {
        // deterministic alternation: the guessed class wins exactly half
        use std::sync::atomic::{AtomicUsize, Ordering};
        let tick = AtomicUsize::new(0);
        let base = FnClassifier::new(1, 2, move |_: &[f64]| tick.fetch_add(1, Ordering::Relaxed) % 2);
        let params = SmoothingParams::new(1.0, 100, 10, 0.01).unwrap();
        let out = certify(&base, &[0.0], &params, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(out, CertifyOutcome::Abstain);
    }

    #[test]
    fn radius_examples() {
        let r = radius_from_bounds(1.0, 0.975, 0.025).unwrap();
        assert!((r - 1.959964).abs() < 1e-6);
        assert_eq!(radius_from_bounds(2.5, 0.7, 0.7).unwrap(), 0.0);
        assert_eq!(radius_from_bounds(1.0, 0.5, 0.5).unwrap(), 0.0);
        assert!(radius_from_bounds(1.0, 0.4, 0.6).is_err());
        assert!(radius_from_bounds(0.0, 0.6, 0.4).is_err());
        assert!(radius_from_bounds(1.0, 1.0, 0.4).is_err());
    }

    #[test]
    fn far_point_is_predicted_positive() {
        let params = SmoothingParams::new(1.0, 100, 100, 0.01).unwrap();
        for seed in 0..20 {
            let mut s = RngStream::new(seed, 0);
            let out = predict_smoothed(&threshold(), &[6.0], &params, &mut s).unwrap();
            assert_eq!(out, SmoothedOutcome::Predicted(1));
        }
    }

    #[test]
    fn vote_label_near_threshold() {
        for seed in 0..20 {
            let mut s = RngStream::new(seed, 5);
            assert_eq!(vote_label(&threshold(), &[1.0], 100, 1.0, &mut s).unwrap(), 1);
        }
        let mut s = RngStream::new(0, 0);
        assert_eq!(vote_label(&constant(2), &[9.0, 9.0], 3, 10.0, &mut s).unwrap(), 2);
    }

    #[test]
    fn vote_oracle_matches_vote_label() {
        let base = threshold();
        let mut oracle = VoteOracle::new(&base, 0.7, 25, RngStream::new(8, 1)).unwrap();
        let mut s = RngStream::new(8, 1);
        for x in [-1.0, -0.1, 0.05, 0.4] {
            assert_eq!(oracle.query(&[x]), vote_label(&base, &[x], 25, 0.7, &mut s).unwrap());
        }
    }
}
