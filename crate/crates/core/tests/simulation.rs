use bigjump::boundary::{Boundary, TailRule};
use bigjump::dist::TailDistribution;
use bigjump::rules::{evaluate, Resolution, StoppingRule};
use bigjump::sim::{
    lattice_dp, one_big_jump_estimate, run_ratio_scan, simulate_crossing, Estimator, WalkConfig, DEFAULT_CELL_BUDGET,
};
use bigjump::Error;

fn pareto() -> TailDistribution {
    TailDistribution::pareto(2.5, 1.0).unwrap().centered()
}

fn cfg(dist: TailDistribution, boundary: Boundary, rule: StoppingRule, xs: Vec<f64>, cap: u64, n: u64) -> WalkConfig {
    WalkConfig {
        dist,
        boundary,
        rule,
        x_grid: xs,
        horizon_cap: cap,
        n_replications: n,
        master_seed: 77,
        estimator: Estimator::Crude,
        threads: Some(1),
        shard_size: 4096,
    }
}

/// Exhaustive `P(M > x)` over all `2^n` sign paths of a fair ±1 walk.
fn enumerate_fair(rule: &StoppingRule, g: &Boundary, x: f64, n: u32) -> f64 {
    let mut total = 0.0;
    for mask in 0u32..(1 << n) {
        let steps: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
        let sums: Vec<f64> = steps
            .iter()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect();
        let stop = match evaluate(rule, &sums, 0) {
            Resolution::Stopped(k) => k,
            _ => n as u64,
        };
        let mut m = -g.eval(0);
        for (i, s) in sums.iter().take(stop as usize).enumerate() {
            m = m.max(s - g.eval(i as u64 + 1));
        }
        if m > x {
            total += 1.0;
        }
    }
    total / f64::from(1u32 << n)
}

#[test]
fn dp_matches_enumeration_for_path_rules() {
    let fair = TailDistribution::lattice(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
    let g = Boundary::tabulated(vec![0.0, 1.0, 1.0, 2.0], TailRule::LinearExtend { slope: 0.0 }).unwrap();
    for rule in [
        StoppingRule::ConstantN { n: 6 },
        StoppingRule::TauA { a: 0.5 },
        StoppingRule::RhoA { a: 0.5 },
        StoppingRule::TauC { c: 0.0 },
        StoppingRule::FirstAscent,
    ] {
        let xs = [-0.5, 0.5, 1.5, 2.5];
        let dp = lattice_dp(&fair, &g, &rule, &xs, 10, DEFAULT_CELL_BUDGET).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            let e = enumerate_fair(&rule, &g, x, 10);
            assert!((dp.probabilities[i] - e).abs() < 1e-12, "{rule:?} x={x}: {} vs {e}", dp.probabilities[i]);
        }
    }
}

#[test]
fn dp_rejects_oversized_state_space() {
    let fair = TailDistribution::lattice(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
    let err = lattice_dp(&fair, &Boundary::zero(), &StoppingRule::FirstAscent, &[1.0], 100_000, 1000);
    assert!(matches!(err, Err(Error::StateBudget { .. })));
}

#[test]
fn crude_covers_exact_lattice_values() {
    let heavy = TailDistribution::lattice(vec![-1.0, 0.0, 4.0], vec![0.5, 0.375, 0.125]).unwrap();
    let mut hits = 0;
    let mut total = 0;
    for seed in 0..10u64 {
        let mut c = cfg(
            heavy.clone(),
            Boundary::linear(0.5).unwrap(),
            StoppingRule::ConstantN { n: 6 },
            vec![0.5, 2.5, 6.5],
            6,
            50_000,
        );
        c.master_seed = seed;
        let est = simulate_crossing(&c).unwrap();
        let dp = lattice_dp(&c.dist, &c.boundary, &c.rule, &c.x_grid, 6, DEFAULT_CELL_BUDGET).unwrap();
        for (e, p) in est.iter().zip(&dp.probabilities) {
            total += 1;
            if (e.p_hat - p).abs() <= 3.0 * e.stderr.max(1e-300) {
                hits += 1;
            }
        }
    }
    assert!(hits as f64 >= 0.9 * total as f64, "{hits}/{total}");
}

#[test]
fn estimators_agree_across_matrix() {
    let configs = vec![
        cfg(pareto(), Boundary::zero(), StoppingRule::ConstantN { n: 5 }, vec![5.0, 15.0], 5, 200_000),
        cfg(pareto(), Boundary::linear(1.0).unwrap(), StoppingRule::TauC { c: 1.0 }, vec![3.0, 10.0], 10_000, 200_000),
        cfg(
            TailDistribution::weibull(0.5, 1.0).unwrap().centered(),
            Boundary::linear(0.5).unwrap(),
            StoppingRule::ConstantN { n: 4 },
            vec![5.0, 20.0],
            4,
            200_000,
        ),
        cfg(
            pareto(),
            Boundary::linear(1.0).unwrap(),
            StoppingRule::IndependentPowerTail { k1: 1.0, alpha: 1.5 },
            vec![2.0, 8.0],
            2000,
            20_000,
        ),
        cfg(
            TailDistribution::lognormal(0.0, 1.0).unwrap().centered(),
            Boundary::linear(0.5).unwrap(),
            StoppingRule::Min {
                first: Box::new(StoppingRule::TauC { c: 0.5 }),
                second: Box::new(StoppingRule::ConstantN { n: 8 }),
            },
            vec![2.0, 10.0],
            8,
            200_000,
        ),
    ];
    for mut c in configs {
        c.estimator = Estimator::Both;
        let r = simulate_crossing(&c).unwrap();
        let k = c.x_grid.len();
        for i in 0..k {
            let (a, b) = (&r[i], &r[k + i]);
            assert!(
                a.ci_95.0 <= b.ci_95.1 && b.ci_95.0 <= a.ci_95.1,
                "{:?} x={}: crude {:?} vs obj {:?}",
                c.rule,
                a.x,
                a.ci_95,
                b.ci_95
            );
        }
    }
}

#[test]
fn obj_variance_is_smaller_for_heavy_tails() {
    let mut c = cfg(pareto(), Boundary::zero(), StoppingRule::ConstantN { n: 5 }, vec![15.0], 5, 200_000);
    c.estimator = Estimator::Both;
    let r = simulate_crossing(&c).unwrap();
    assert!(r[1].stderr.powi(2) < 0.5 * r[0].stderr.powi(2));
}

#[test]
fn results_do_not_depend_on_threads() {
    let mut c = cfg(pareto(), Boundary::linear(1.0).unwrap(), StoppingRule::TauC { c: 1.0 }, vec![1.0, 5.0], 5000, 30_000);
    c.estimator = Estimator::Both;
    c.shard_size = 1000;
    let one = simulate_crossing(&c).unwrap();
    c.threads = Some(3);
    let three = simulate_crossing(&c).unwrap();
    assert_eq!(one, three);
}

#[test]
fn larger_rule_crosses_more() {
    let base = cfg(pareto(), Boundary::zero(), StoppingRule::ConstantN { n: 3 }, vec![2.0, 8.0], 5, 100_000);
    let small = simulate_crossing(&base).unwrap();
    let mut c = base.clone();
    c.rule = StoppingRule::ConstantN { n: 5 };
    let large = simulate_crossing(&c).unwrap();
    for (s, l) in small.iter().zip(&large) {
        // same increments feed both runs, so the larger rule dominates path by path
        assert!(l.p_hat >= s.p_hat);
    }
}

#[test]
fn sampled_rule_unresolved_at_cap_is_an_error() {
    let mut c = cfg(pareto(), Boundary::zero(), StoppingRule::FirstAscent, vec![1.0], 3, 10_000);
    c.estimator = Estimator::OneBigJump;
    assert!(matches!(one_big_jump_estimate(&c), Err(Error::Unresolved { .. })));
    c.rule = StoppingRule::FirstPassageMinusOne { a: 1.0 };
    assert!(matches!(one_big_jump_estimate(&c), Err(Error::Unsupported(_))));
}

#[test]
fn anticipating_rule_never_crosses_above_a() {
    let c = cfg(
        pareto(),
        Boundary::zero(),
        StoppingRule::FirstPassageMinusOne { a: 2.0 },
        vec![0.5, 2.0, 4.0],
        500,
        50_000,
    );
    let r = simulate_crossing(&c).unwrap();
    assert!(r[0].n_crossings > 0);
    assert_eq!(r[1].n_crossings, 0);
    assert_eq!(r[2].n_crossings, 0);
}

#[test]
fn capped_infinite_rule_is_flagged_with_hint() {
    let mut c = cfg(
        pareto(),
        Boundary::linear(1.0).unwrap(),
        StoppingRule::WithInfinityMass {
            p: 0.5,
            inner: Box::new(StoppingRule::ConstantN { n: 2 }),
        },
        vec![5.0],
        200,
        2000,
    );
    c.estimator = Estimator::OneBigJump;
    let r = simulate_crossing(&c).unwrap();
    assert!(r[0].lower_bound);
    let hint = r[0].cap_remainder_hint.unwrap();
    let expected = 0.5 * c.dist.tail_integral(5.0 + 200.0).unwrap();
    assert!((hint - expected).abs() < 1e-12 * expected.max(1e-300) + 1e-15);
}

/// Twelve (σ, g) pairs under subexponential increments with `g ∈ G_c`:
/// the ratio to `H` should be near one at a high level.
#[test]
fn ratio_near_one_on_theorem_matrix() {
    let rules = [
        StoppingRule::ConstantN { n: 1 },
        StoppingRule::ConstantN { n: 4 },
        StoppingRule::TauC { c: 1.0 },
        StoppingRule::TauA { a: 0.5 },
        StoppingRule::RhoA { a: 0.5 },
        StoppingRule::WithInfinityMass {
            p: 0.2,
            inner: Box::new(StoppingRule::ConstantN { n: 3 }),
        },
    ];
    let boundaries = [
        Boundary::linear(1.0).unwrap(),
        Boundary::tabulated(vec![2.0, 3.0, 5.5, 7.0], TailRule::LinearExtend { slope: 1.5 }).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for rule in &rules {
        for b in &boundaries {
            let mut c = cfg(pareto(), b.clone(), rule.clone(), vec![30.0, 1000.0], 5000, 20_000);
            c.estimator = Estimator::OneBigJump;
            c.shard_size = 2000;
            let rows = run_ratio_scan(&c, 20_000, 1e-8).unwrap();
            let last = rows.last().unwrap();
            worst = worst.max((last.ratio - 1.0).abs());
            assert!(
                (last.ratio - 1.0).abs() < 0.12 + 3.0 * last.rel_err,
                "{rule:?} {b:?}: ratio {} ± {}",
                last.ratio,
                last.rel_err
            );
        }
    }
    assert!(worst.is_finite());
}
