//! Exact binomial tails, the one-sided Clopper–Pearson lower bound and the
//! two-sided binomial test against p = 1/2.
//!
//! Tails are summed term by term in log space; no incomplete beta function is
//! involved.

use std::f64::consts::LN_2;

use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

fn check_counts(k: u64, n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::domain("binomial: n must be at least 1"));
    }
    if k > n {
        return Err(Error::domain(format!("binomial: k={k} exceeds n={n}")));
    }
    Ok(())
}

/// Sums `exp(log_terms)` without overflow or early underflow.
fn log_sum_exp(log_terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = log_terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let sum: f64 = log_terms.map(|l| (l - max).exp()).sum();
    max.exp() * sum
}

/// `P[X >= k]` for `X ~ Binom(n, p)`.
pub(crate) fn upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let first = ln_binomial(n, k) + k as f64 * ln_p + (n - k) as f64 * ln_q;
    let log_odds = ln_p - ln_q;
    // log pmf(j+1) = log pmf(j) + ln((n-j)/(j+1)) + ln(p/q)
    let mut terms = Vec::with_capacity((n - k + 1) as usize);
    let mut current = first;
    terms.push(current);
    for j in k..n {
        current += ((n - j) as f64 / (j + 1) as f64).ln() + log_odds;
        terms.push(current);
    }
    log_sum_exp(terms.iter().copied()).min(1.0)
}

/// One-sided lower confidence bound on a binomial proportion.
///
/// Returns the largest `p` with `P[X >= k | Binom(n, p)] <= alpha`, found by
/// bisection on the exactly summed tail. Zero when `k == 0`.
pub fn clopper_pearson_lower(k: u64, n: u64, alpha: f64) -> Result<f64> {
    check_counts(k, n)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("clopper_pearson_lower: alpha={alpha} outside (0, 1)")));
    }
    if k == 0 {
        return Ok(0.0);
    }
    if k == n {
        // tail is p^n
        return Ok(alpha.powf(1.0 / n as f64));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if upper_tail(k, n, mid) <= alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Exact two-sided p-value of `k` successes in `n` trials under `H0: p = 1/2`.
///
/// `min(1, 2 * min(P[X <= k], P[X >= k]))`; by symmetry this is
/// `2 * P[X <= min(k, n - k)]`.
pub fn binom_two_sided_pvalue(k: u64, n: u64) -> Result<f64> {
    check_counts(k, n)?;
    let m = k.min(n - k);
    // modal values: the smaller tail holds at least half the mass
    if 2 * m + 1 >= n {
        return Ok(1.0);
    }
    let base = -(n as f64) * LN_2;
    let mut terms = Vec::with_capacity(m as usize + 1);
    let mut current = base;
    terms.push(current);
    for j in 0..m {
        current += ((n - j) as f64 / (j + 1) as f64).ln();
        terms.push(current);
    }
    Ok((2.0 * log_sum_exp(terms.iter().copied())).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn choose(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    fn naive_tail(k: u64, n: u64, p: f64) -> f64 {
        (k..=n)
            .map(|j| choose(n, j) * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32))
            .sum()
    }

    #[test]
    fn zero_successes_give_zero_bound() {
        assert_eq!(clopper_pearson_lower(0, 100, 0.001).unwrap(), 0.0);
    }

    #[test]
    fn unanimous_bound_is_alpha_root() {
        let got = clopper_pearson_lower(10, 10, 0.001).unwrap();
        assert!((got - 0.001f64.powf(0.1)).abs() < 1e-12);
        assert!((got - 0.501187).abs() < 1e-6);
    }

    #[test]
    fn eight_of_ten_solves_tail_equation() {
        // independent bisection over the naive tail sum
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if naive_tail(8, 10, mid) <= 0.05 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let got = clopper_pearson_lower(8, 10, 0.05).unwrap();
        assert!((got - lo).abs() < 1e-9);
        assert!((naive_tail(8, 10, got) - 0.05).abs() < 1e-9);
        // frozen: 0.4930987...
        assert!((got - 0.493_098_7).abs() < 1e-6, "{got}");
    }

    #[test]
    fn bound_monotone_in_k() {
        for n in [1u64, 7, 50, 333] {
            let mut prev = -1.0;
            for k in 0..=n {
                let b = clopper_pearson_lower(k, n, 0.01).unwrap();
                assert!(b >= prev);
                prev = b;
            }
        }
    }

    #[test]
    fn bound_rejects_bad_counts() {
        assert!(clopper_pearson_lower(11, 10, 0.05).is_err());
        assert!(clopper_pearson_lower(0, 0, 0.05).is_err());
        assert!(clopper_pearson_lower(1, 10, 0.0).is_err());
        assert!(clopper_pearson_lower(1, 10, 1.0).is_err());
    }

    #[test]
    fn large_n_bound_is_accurate() {
        let n = 100_000;
        let k = 99_000;
        let b = clopper_pearson_lower(k, n, 0.001).unwrap();
        assert!((upper_tail(k, n, b) - 0.001).abs() < 1e-9);
        assert!(b < 0.99 && b > 0.985);
    }

    #[test]
    fn pvalue_examples() {
        assert_eq!(binom_two_sided_pvalue(5, 10).unwrap(), 1.0);
        let ten = binom_two_sided_pvalue(10, 10).unwrap();
        assert!((ten - 2.0 * 0.5f64.powi(10)).abs() < 1e-12);
        assert_eq!(binom_two_sided_pvalue(0, 10).unwrap(), ten);
        assert!(binom_two_sided_pvalue(11, 10).is_err());
    }

    #[test]
    fn pvalue_matches_naive_summation() {
        for n in 1..=25u64 {
            for k in 0..=n {
                let lower: f64 = (0..=k).map(|j| choose(n, j)).sum::<f64>() / 2f64.powi(n as i32);
                let upper: f64 = (k..=n).map(|j| choose(n, j)).sum::<f64>() / 2f64.powi(n as i32);
                let expect = (2.0 * lower.min(upper)).min(1.0);
                let got = binom_two_sided_pvalue(k, n).unwrap();
                assert!((got - expect).abs() < 1e-12, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn pvalue_equals_one_only_at_modal_values() {
        for n in 1..=60u64 {
            for k in 0..=n {
                let p = binom_two_sided_pvalue(k, n).unwrap();
                assert!((0.0..=1.0).contains(&p));
                let modal = if n % 2 == 0 {
                    k == n / 2
                } else {
                    k == n / 2 || k == n / 2 + 1
                };
                assert_eq!(p == 1.0, modal, "k={k} n={n} p={p}");
            }
        }
    }
}
