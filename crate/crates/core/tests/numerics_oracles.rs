use proptest::prelude::*;
use robust_privacy::numerics::{binom_two_sided_pvalue, clopper_pearson_lower, std_normal_cdf, std_normal_inv_cdf};

fn choose(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `P[X >= k]`, summed term by term in plain floating point.
fn upper_tail(k: u64, n: u64, p: f64) -> f64 {
    (k..=n).map(|j| choose(n, j) * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32)).sum()
}

fn pmf(j: u64, n: u64, p: f64) -> f64 {
    choose(n, j) * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32)
}

#[test]
fn lower_bound_solves_tail_equation_for_small_n() {
    for alpha in [0.05, 0.001] {
        for n in 1..=20u64 {
            assert_eq!(clopper_pearson_lower(0, n, alpha).unwrap(), 0.0);
            for k in 1..=n {
                let lo = clopper_pearson_lower(k, n, alpha).unwrap();
                let residual = (upper_tail(k, n, lo) - alpha).abs();
                assert!(residual <= 1e-7, "k={k} n={n} alpha={alpha} lo={lo} residual={residual}");
            }
        }
    }
}

#[test]
fn lower_bound_has_exact_coverage() {
    // P_p[lower(X) <= p] >= 1 - alpha for every p, computed exactly over X
    let alpha = 0.05;
    for n in [5u64, 12, 40] {
        let bounds: Vec<f64> = (0..=n).map(|k| clopper_pearson_lower(k, n, alpha).unwrap()).collect();
        for i in 1..200 {
            let p = i as f64 / 200.0;
            let coverage: f64 = (0..=n).filter(|&k| bounds[k as usize] <= p).map(|k| pmf(k, n, p)).sum();
            assert!(coverage >= 1.0 - alpha - 1e-12, "n={n} p={p} coverage={coverage}");
        }
    }
}

#[test]
fn two_sided_pvalue_matches_summed_tails() {
    for n in 1..=20u64 {
        for k in 0..=n {
            let extreme = k.max(n - k);
            let oracle = (2.0 * upper_tail(extreme, n, 0.5)).min(1.0);
            let p = binom_two_sided_pvalue(k, n).unwrap();
            assert!((p - oracle).abs() < 1e-12, "k={k} n={n} p={p} oracle={oracle}");
        }
    }
}

#[test]
fn quantile_round_trip_on_wide_grid() {
    for i in 0..=1200 {
        let x = -6.0 + i as f64 * 0.01;
        let back = std_normal_inv_cdf(std_normal_cdf(x).unwrap()).unwrap();
        assert!((back - x).abs() <= 1e-7, "x={x} back={back}");
    }
}

proptest! {
    #[test]
    fn lower_bound_is_monotone_in_successes(n in 1u64..400, k in 0u64..400, alpha in 0.0005f64..0.5) {
        let k = k % n;
        let a = clopper_pearson_lower(k, n, alpha).unwrap();
        let b = clopper_pearson_lower(k + 1, n, alpha).unwrap();
        prop_assert!(a <= b);
        prop_assert!((0.0..=1.0).contains(&a));
        // never above the point estimate
        prop_assert!(b <= (k + 1) as f64 / n as f64 + 1e-12);
    }

    #[test]
    fn lower_bound_loosens_with_confidence(n in 1u64..300, k in 1u64..300, a1 in 0.0005f64..0.5, a2 in 0.0005f64..0.5) {
        let k = 1 + k % n;
        let (lo_a, hi_a) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
        prop_assert!(clopper_pearson_lower(k, n, lo_a).unwrap() <= clopper_pearson_lower(k, n, hi_a).unwrap() + 1e-12);
    }

    #[test]
    fn pvalue_is_symmetric(n in 1u64..500, k in 0u64..500) {
        let k = k % (n + 1);
        let p = binom_two_sided_pvalue(k, n).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p, binom_two_sided_pvalue(n - k, n).unwrap());
    }

    #[test]
    fn cdf_is_monotone(a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(std_normal_cdf(lo).unwrap() <= std_normal_cdf(hi).unwrap());
    }
}
