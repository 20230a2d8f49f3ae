use bigjump::boundary::{Boundary, TailRule};
use bigjump::dist::TailDistribution;
use bigjump::hfunc::{h_sum, lemma2_check, sandwich};
use bigjump::rules::{evaluate, AnalyticTail, Resolution, StoppingRule, TailSequence};
use bigjump::sim::{simulate_crossing, Estimator, WalkConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn family() -> impl Strategy<Value = TailDistribution> {
    prop_oneof![
        (1.2f64..4.0, 0.2f64..3.0).prop_map(|(b, s)| TailDistribution::pareto(b, s).unwrap().centered()),
        (0.2f64..0.9, 0.2f64..3.0).prop_map(|(k, s)| TailDistribution::weibull(k, s).unwrap().centered()),
        (-1.0f64..1.0, 0.2f64..1.5).prop_map(|(m, s)| TailDistribution::lognormal(m, s).unwrap().centered()),
        (0.2f64..3.0).prop_map(|r| TailDistribution::exponential(r).unwrap().centered()),
    ]
}

fn heavy() -> impl Strategy<Value = TailDistribution> {
    prop_oneof![
        (1.5f64..3.5, 0.5f64..2.0).prop_map(|(b, s)| TailDistribution::pareto(b, s).unwrap().centered()),
        (0.3f64..0.8, 0.5f64..2.0).prop_map(|(k, s)| TailDistribution::weibull(k, s).unwrap().centered()),
    ]
}

fn increments() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..3.0, 1..12)
}

fn cumulative(incs: &[f64]) -> Vec<f64> {
    incs.iter()
        .scan(0.0, |s, d| {
            *s += d;
            Some(*s)
        })
        .collect()
}

fn path_rule() -> impl Strategy<Value = StoppingRule> {
    prop_oneof![
        (0u64..6).prop_map(|n| StoppingRule::ConstantN { n }),
        (0.0f64..1.0).prop_map(|a| StoppingRule::TauA { a }),
        (0.0f64..1.0).prop_map(|a| StoppingRule::RhoA { a }),
        (0.0f64..1.0).prop_map(|c| StoppingRule::TauC { c }),
        Just(StoppingRule::FirstAscent),
        (-1.0f64..1.0).prop_map(|a| StoppingRule::FirstStepThreshold { a }),
        (0.0f64..2.0).prop_map(|a| StoppingRule::FirstPassageMinusOne { a }),
        (0.0f64..2.0).prop_map(|a| StoppingRule::FirstBigJumpMinusOne { a }),
    ]
}

fn index(r: Resolution) -> Option<u64> {
    match r {
        Resolution::Stopped(n) => Some(n),
        _ => None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tails_are_nonincreasing(d in family(), x1 in -3.0f64..50.0, dx in 0.0f64..50.0) {
        let t1 = d.tail(x1);
        let t2 = d.tail(x1 + dx);
        prop_assert!((0.0..=1.0).contains(&t1));
        prop_assert!(t1 >= t2);
    }

    #[test]
    fn integrated_tail_nonincreasing_and_bounded(d in heavy(), x1 in 0.0f64..30.0, dx in 0.1f64..30.0) {
        let a = d.integrated_tail(x1).unwrap();
        let b = d.integrated_tail(x1 + dx).unwrap();
        prop_assert!(a <= 1.0 && b >= 0.0);
        prop_assert!(a >= b);
    }

    #[test]
    fn sampler_streams_repeat(d in family(), seed in any::<u64>()) {
        let a: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..16).map(|_| d.sample(&mut r)).collect()
        };
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..16).map(|_| d.sample(&mut r)).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn classes_shrink_with_c(incs in increments(), c in 0.0f64..3.0, frac in 0.0f64..1.0) {
        let b = Boundary::tabulated(cumulative(&incs), TailRule::LinearExtend { slope: 3.0 }).unwrap();
        if b.verify_class(c).holds {
            prop_assert!(b.verify_class(c * frac).holds);
        }
    }

    #[test]
    fn v_g_at_least_one(d in heavy(), slope in 0.0f64..3.0, x in 0.0f64..200.0) {
        let b = Boundary::linear(slope).unwrap();
        if let Ok(v) = b.v_g(&d, x, 100_000) {
            prop_assert!(v >= 1.0);
        }
    }

    #[test]
    fn extension_is_monotone(incs in increments(), t1 in 0.0f64..20.0, dt in 0.0f64..5.0) {
        let b = Boundary::tabulated(cumulative(&incs), TailRule::LinearExtend { slope: 1.0 }).unwrap();
        let r = b.extend_to_real().unwrap();
        prop_assert!(r.eval(t1) <= r.eval(t1 + dt) + 1e-12);
        let n = t1.floor() as u64;
        prop_assert!((r.eval(n as f64) - b.eval(n)).abs() < 1e-9);
    }

    #[test]
    fn resolution_is_prefix_measurable(
        rule in path_rule(),
        path in prop::collection::vec(-3.0f64..3.0, 0..20),
        extra in prop::collection::vec(-3.0f64..3.0, 0..20),
    ) {
        if let Resolution::Stopped(n) = evaluate(&rule, &path, 3) {
            let mut longer = path.clone();
            longer.extend(extra);
            prop_assert_eq!(evaluate(&rule, &longer, 3), Resolution::Stopped(n));
        }
    }

    #[test]
    fn min_is_pointwise(
        a in path_rule(),
        b in path_rule(),
        path in prop::collection::vec(-3.0f64..3.0, 30..40),
    ) {
        let m = StoppingRule::Min { first: Box::new(a.clone()), second: Box::new(b.clone()) };
        let (ia, ib) = (index(evaluate(&a, &path, 5)), index(evaluate(&b, &path, 5)));
        if let (Some(x), Some(y)) = (ia, ib) {
            prop_assert_eq!(index(evaluate(&m, &path, 5)), Some(x.min(y)));
        }
    }

    #[test]
    fn analytic_tails_nonincreasing(k1 in 0.1f64..3.0, alpha in 0.1f64..3.0, q in 0.05f64..0.99, p in 0.0f64..1.0) {
        for t in [
            AnalyticTail::Power { k1, alpha },
            AnalyticTail::Geometric { q },
            AnalyticTail::InfinityMass { p, inner: Box::new(AnalyticTail::Geometric { q }) },
        ] {
            let s = TailSequence::analytic(t, 200);
            let v = s.values();
            prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!(v.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn h_monotone_in_x_g_and_sigma(
        d in heavy(),
        slope in 0.2f64..2.0,
        extra in 0.0f64..2.0,
        n in 1u64..20,
        x in 0.0f64..100.0,
        dx in 0.1f64..100.0,
    ) {
        let tail = TailSequence::analytic(AnalyticTail::Constant { n }, n);
        let bigger = TailSequence::analytic(AnalyticTail::Constant { n: n + 3 }, n + 3);
        let g = Boundary::linear(slope).unwrap();
        let g_up = Boundary::linear(slope + extra).unwrap();
        let h = h_sum(&tail, &g, &d, x, 1e-10).unwrap();
        let h_far = h_sum(&tail, &g, &d, x + dx, 1e-10).unwrap();
        prop_assert!(h_far.value <= h.upper());
        let h_up = h_sum(&tail, &g_up, &d, x, 1e-10).unwrap();
        prop_assert!(h_up.value <= h.upper() + h_up.truncation_bound);
        let h_big = h_sum(&bigger, &g, &d, x, 1e-10).unwrap();
        prop_assert!(h_big.upper() >= h.value);
    }

    #[test]
    fn lemma2_and_sandwich_hold(
        d in heavy(),
        incs in increments(),
        b in 0.1f64..1.0,
        gap in 0.1f64..2.0,
        alpha in 0.5f64..2.5,
        x in 1.0f64..500.0,
    ) {
        let g = Boundary::tabulated(cumulative(&incs), TailRule::LinearExtend { slope: 1.0 }).unwrap();
        let tail = TailSequence::analytic(AnalyticTail::Power { k1: 1.0, alpha }, 1);
        let rep = lemma2_check(&tail, &g, &d, &[(b, b + gap)], &[x], 1e-9).unwrap();
        prop_assert!(rep.holds(), "{:?}", rep.first_violation);
        let s = sandwich(&tail, &g.plus_linear(b).unwrap(), &d, x, 1e-9).unwrap();
        prop_assert!(s.lower_holds && s.upper_holds, "{:?}", s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn crossing_estimates_nonincreasing_in_x(
        seed in any::<u64>(),
        slope in 0.0f64..1.5,
        n in 1u64..8,
        est in prop_oneof![Just(Estimator::Crude), Just(Estimator::OneBigJump)],
    ) {
        let cfg = WalkConfig {
            dist: TailDistribution::pareto(2.5, 1.0).unwrap().centered(),
            boundary: Boundary::linear(slope).unwrap(),
            rule: StoppingRule::ConstantN { n },
            x_grid: vec![-0.5, 0.5, 2.0, 5.0, 20.0],
            horizon_cap: n,
            n_replications: 2000,
            master_seed: seed,
            estimator: est,
            threads: Some(1),
            shard_size: 500,
        };
        let r = simulate_crossing(&cfg).unwrap();
        prop_assert_eq!(r[0].p_hat, 1.0);
        prop_assert!(r.windows(2).all(|w| w[1].p_hat <= w[0].p_hat + 1e-15));
    }
}
