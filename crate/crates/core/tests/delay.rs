use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use pipesched_core::delay::*;
use proptest::prelude::*;

fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// max_t |θ_t − θ_t^sync| for F = ½θ², θ₀ = 1, σ = 0, in exact arithmetic.
fn exact_max_discrepancy(eta: &BigRational, steps: usize) -> BigRational {
    let one = rat(1, 1);
    let mut sync = one.clone();
    let (mut prev, mut cur) = (one.clone(), one.clone());
    let mut best = BigRational::zero();
    for t in 0..steps {
        sync = &sync - eta * &sync;
        let used = if t == 0 { cur.clone() } else { prev.clone() };
        let next = &cur - eta * used;
        prev = cur;
        cur = next;
        let d = (&cur - &sync).abs();
        if d > best {
            best = d;
        }
    }
    best
}

#[test]
fn float_discrepancy_matches_exact_rational_recursion() {
    let obj = Objective::diagonal_quadratic(&[1.0]).unwrap();
    let noise = NoiseModel::new(0.0, 0);
    for (num, den) in [(1, 5), (1, 10), (1, 20), (1, 40)] {
        let eta = num as f64 / den as f64;
        let (_, d) = paired_run(&obj, &noise, &OptimizerSpec::sgd(eta), &[1.0], 120, &DelaySchedule::OneStep).unwrap();
        let got = d.max_discrepancy().unwrap();
        let want = exact_max_discrepancy(&rat(num, den), 120).to_f64().unwrap();
        assert!((got - want).abs() <= 1e-12 * want, "η={eta}: {got} vs {want}");
    }
}

#[test]
fn noiseless_discrepancy_halves_with_step() {
    let steps = 400;
    // From η = 0.2 the ratio is 0.43; the higher-order term is still visible.
    for (num, den) in [(1, 10), (1, 20), (1, 40)] {
        let big = exact_max_discrepancy(&rat(num, den), steps).to_f64().unwrap();
        let small = exact_max_discrepancy(&rat(num, 2 * den), steps).to_f64().unwrap();
        let r = small / big;
        assert!((r - 0.5).abs() <= 0.05, "η={num}/{den}: ratio {r}");
    }
}

#[test]
fn noise_statistics_match_model() {
    let s = noise_statistics(&NoiseModel::new(1.0, 11), 10, 100_000);
    assert!((s.total_variance - 1.0).abs() < 0.05, "{}", s.total_variance);
    let tol = 4.0 * (0.1f64).sqrt() / (100_000f64).sqrt();
    assert!(s.mean.iter().all(|m| m.abs() < tol), "{:?}", s.mean);
}

#[test]
fn scaling_slopes_near_one() {
    let cfg = ScalingConfig::standard(10);
    for obj in [Objective::spread_quadratic(10), Objective::smooth_nonconvex(10)] {
        for opt in [OptimizerSpec::sgd(0.1), OptimizerSpec::adam(0.1)] {
            let fit = discrepancy_scaling(&obj, &opt, &cfg).unwrap();
            let slope = fit.slope.unwrap();
            let res = fit.residual.unwrap();
            assert!((0.8..=1.2).contains(&slope), "{:?} {:?}: slope {slope}", obj.kind, opt.kind);
            assert!(res < 0.05, "{:?} {:?}: residual {res}", obj.kind, opt.kind);
            assert!(fit.excluded.is_empty());
        }
    }
}

#[test]
fn convergence_bound_holds_on_quadratic() {
    let obj = Objective::spread_quadratic(10);
    let theta0 = vec![1.0; 10];
    let seeds: Vec<u64> = (0..20).collect();
    let cal = calibrate_c(&obj, 1.0, &OptimizerSpec::sgd(0.05), &theta0, &[0.2, 0.1, 0.05, 0.025], 2000, &seeds).unwrap();
    let chk = check_convergence_bound(&obj, 1.0, &OptimizerSpec::sgd(0.05), &theta0, 2000, &seeds, cal.c).unwrap();
    assert!(chk.pass, "{chk:?}");
    assert_eq!(chk.seeds, 20);
}

#[test]
fn same_seed_twice_is_identical() {
    let obj = Objective::smooth_nonconvex(6);
    let n = NoiseModel::new(1.0, 42);
    let a = run_delayed(&obj, &n, &OptimizerSpec::adam(0.1), &[1.0; 6], 100, &DelaySchedule::OneStep).unwrap();
    let b = run_delayed(&obj, &n, &OptimizerSpec::adam(0.1), &[1.0; 6], 100, &DelaySchedule::OneStep).unwrap();
    assert_eq!(a, b);
}

fn any_kind() -> impl Strategy<Value = OptimizerSpec> {
    prop_oneof![
        (0.01f64..0.5).prop_map(OptimizerSpec::sgd),
        (0.01f64..0.5, 0.0f64..0.99).prop_map(|(e, b)| OptimizerSpec::momentum(e, b)),
        (0.01f64..0.5).prop_map(OptimizerSpec::adam),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_delay_has_zero_discrepancy(opt in any_kind(), seed in any::<u64>(), p in 1usize..8) {
        let obj = Objective::smooth_nonconvex(p);
        let (s, d) = paired_run(&obj, &NoiseModel::new(1.0, seed), &opt, &vec![1.0; p], 60, &DelaySchedule::Zero).unwrap();
        prop_assert_eq!(d.max_discrepancy(), Some(0.0));
        prop_assert_eq!(s.iterates, d.iterates);
    }

    #[test]
    fn trace_lengths_consistent(opt in any_kind(), steps in 0usize..50, seed in any::<u64>()) {
        let obj = Objective::spread_quadratic(3);
        let (s, d) = paired_run(&obj, &NoiseModel::new(1.0, seed), &opt, &[1.0; 3], steps, &DelaySchedule::OneStep).unwrap();
        for tr in [&s, &d] {
            prop_assert_eq!(tr.iterates.len(), steps + 1);
            prop_assert_eq!(tr.objective.len(), steps + 1);
            prop_assert_eq!(tr.grad_norm_sq.len(), steps + 1);
        }
        prop_assert!(s.discrepancy_norm.is_none());
        prop_assert_eq!(d.discrepancy_norm.as_ref().unwrap().len(), steps + 1);
    }

    #[test]
    fn adam_preconditioner_clamped(
        c_min in 0.01f64..1.0, width in 1.0f64..100.0, eta in 0.01f64..0.5, seed in any::<u64>()
    ) {
        let opt = OptimizerSpec { c_min, c_max: c_min * width, ..OptimizerSpec::adam(eta) };
        let obj = Objective::smooth_nonconvex(4);
        let tr = run_delayed(&obj, &NoiseModel::new(1.0, seed), &opt, &[1.0; 4], 80, &DelaySchedule::OneStep).unwrap();
        prop_assert!(tr.precond_range.0 >= opt.c_min && tr.precond_range.1 <= opt.c_max);
    }

    #[test]
    fn objectives_respect_smoothness_and_lower_bound(
        x in prop::collection::vec(-50.0f64..50.0, 5), y in prop::collection::vec(-50.0f64..50.0, 5)
    ) {
        for obj in [Objective::spread_quadratic(5), Objective::smooth_nonconvex(5)] {
            prop_assert!(obj.value(&x) >= obj.lower_bound);
            let gx = obj.grad(&x);
            let gy = obj.grad(&y);
            let dg: f64 = gx.iter().zip(&gy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dx: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dg <= obj.smoothness * dx * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn ema_divergence_is_linear_in_perturbation(size in 1e-6f64..1.0, seed in any::<u64>()) {
        let opt = OptimizerSpec::adam(0.1);
        let r = check_lipschitz_recursions(&opt, &[size, size / 2.0], 50, 3, seed).unwrap();
        prop_assert!(r.rows[1].max_m_diff <= 0.5 * r.rows[0].max_m_diff * (1.0 + 1e-9) + 1e-15);
        prop_assert!(r.l_phi <= 1.0 + 1e-9);
    }
}
