use proptest::prelude::*;
use robust_privacy::ape::{baseline_inference_set, expanded_inference_set, ApeGrid, Interval, IntervalSet};

fn interval_set() -> impl Strategy<Value = IntervalSet> {
    prop::collection::vec((-50.0f64..50.0, 0.0f64..10.0), 1..6).prop_map(|raw| {
        IntervalSet::from_intervals(raw.into_iter().map(|(lo, w)| Interval::new(lo, lo + w).unwrap()).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn expansion_contains_baseline_and_every_ball(
        base in interval_set(),
        step in 0.05f64..2.0,
        radii in prop::collection::vec(0.0f64..4.0, 8),
    ) {
        let grid = ApeGrid::new(-60.0, 60.0, step).unwrap();
        let radius_at = |z: f64| radii[((z * 7.0).abs() as usize) % radii.len()];
        let out = expanded_inference_set(&base, radius_at, &grid).unwrap();
        prop_assert!(out.contains_set(&base));
        for iv in base.intervals() {
            for z in [iv.lo, iv.hi] {
                let r = radius_at(z);
                let ball = IntervalSet::from_intervals(vec![Interval::new(z - r, z + r).unwrap()]);
                prop_assert!(out.contains_set(&ball));
            }
        }
    }

    #[test]
    fn uniform_radius_widens_interval_exactly(a in -100.0f64..100.0, w in 0.0f64..20.0, r in 0.0f64..5.0, step in 0.01f64..3.0) {
        let b = a + w;
        let grid = ApeGrid::new(a - 1.0, b + 1.0, step).unwrap();
        let base = IntervalSet::from_intervals(vec![Interval::new(a, b).unwrap()]);
        let out = expanded_inference_set(&base, |_| r, &grid).unwrap();
        prop_assert_eq!(out.intervals(), &[Interval { lo: a - r, hi: b + r }][..]);
    }

    #[test]
    fn larger_radius_gives_larger_set(base in interval_set(), r1 in 0.0f64..3.0, extra in 0.0f64..3.0) {
        let grid = ApeGrid::new(-60.0, 60.0, 0.5).unwrap();
        let small = expanded_inference_set(&base, |_| r1, &grid).unwrap();
        let large = expanded_inference_set(&base, |_| r1 + extra, &grid).unwrap();
        prop_assert!(large.contains_set(&small));
    }

    #[test]
    fn threshold_baseline_is_upper_ray(b in -5.0f64..5.0) {
        let grid = ApeGrid::new(-10.0, 10.0, 0.1).unwrap();
        let set = baseline_inference_set(|z| usize::from(z >= b), &1, &grid);
        prop_assert_eq!(set.intervals().len(), 1);
        let iv = set.intervals()[0];
        prop_assert_eq!(iv.hi, 10.0);
        prop_assert!(iv.lo >= b && iv.lo < b + 0.1 + 1e-9);
    }

    #[test]
    fn halving_the_step_keeps_the_band(a in -8.0f64..4.0, w in 0.0f64..4.0, step in 0.02f64..1.0) {
        let b = a + 2.0 * step + w;
        let band = |z: f64| z >= a && z <= b;
        let coarse = baseline_inference_set(band, &true, &ApeGrid::new(-10.0, 10.0, step).unwrap());
        let fine = baseline_inference_set(band, &true, &ApeGrid::new(-10.0, 10.0, step / 2.0).unwrap());
        prop_assert_eq!(coarse.intervals().len(), 1);
        prop_assert_eq!(fine.intervals().len(), 1);
        let (c, f) = (coarse.intervals()[0], fine.intervals()[0]);
        prop_assert!(f.lo <= c.lo + step + 1e-9, "coarse {:?} fine {:?}", c, f);
        prop_assert!(f.hi >= c.hi - step - 1e-9, "coarse {:?} fine {:?}", c, f);
    }
}
