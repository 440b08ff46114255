use robust_privacy::inversion::{evaluate_asr, run_attack, AttackConfig, DomainBox, NO_INIT};
use robust_privacy::numerics::RngStream;
use robust_privacy::smoothing::{FnClassifier, VoteOracle};

fn config(seed: u64) -> AttackConfig {
    AttackConfig {
        target_class: 1,
        probe_count: 16,
        probe_radius: 0.5,
        step_size: 0.2,
        max_iters: 200,
        init_budget: 500,
        seed,
    }
}

fn square() -> DomainBox {
    DomainBox::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap()
}

#[test]
fn half_space_attack_moves_off_the_boundary() {
    // target region is x0 > 0
    let half = |x: &[f64]| usize::from(x[0] > 0.0);
    for seed in 0..20 {
        let res = run_attack(&mut |x: &[f64]| half(x), &config(seed), &square()).unwrap();
        assert!(res.success, "seed {seed} did not converge");
        assert!(res.final_point[0] >= 0.5 - 1e-9, "seed {seed} stopped at {:?}", res.final_point);
        assert!(res.path.iter().all(|p| p[0] > 0.0));
        assert_eq!(res.path.len(), res.iterations);
    }
}

#[test]
fn asr_against_a_matching_evaluator_is_one() {
    let half = |x: &[f64]| usize::from(x[0] > 0.0);
    let results: Vec<_> = (0..10)
        .map(|s| run_attack(&mut |x: &[f64]| half(x), &config(s), &square()).unwrap())
        .collect();
    let targets = vec![1; 10];
    assert_eq!(evaluate_asr(&results, &half, &targets).unwrap(), 1.0);
    let never = |_: &[f64]| 0usize;
    assert_eq!(evaluate_asr(&results, &never, &targets).unwrap(), 0.0);
}

#[test]
fn attack_is_reproducible_against_a_noisy_oracle() {
    let base = FnClassifier::new(2, 2, |x: &[f64]| usize::from(x[0] > 0.0));
    let run = || {
        let mut oracle = VoteOracle::new(&base, 0.3, 7, RngStream::new(4, 4)).unwrap();
        run_attack(&mut |x: &[f64]| oracle.query(x), &config(9), &square()).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn unreachable_target_reports_missing_start() {
    let res = run_attack(&mut |_: &[f64]| 0, &config(1), &square()).unwrap();
    assert!(!res.success);
    assert!(res.final_point.is_empty());
    assert_eq!(res.queries_used, 500);
    assert_eq!(res.abandoned_reason.as_deref(), Some(NO_INIT));
}
