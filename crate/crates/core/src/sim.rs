//! Monte Carlo for `P(M_σ^g > x)` and an exact lattice oracle.
//!
//! The one-big-jump estimator scores each path by the conditional
//! probability that the next increment is the first to cross:
//!
//! `Z = 1{-g(0) > x} + Σ_{k ≤ σ} 1{M_{k-1} ≤ x} F̄(x + g(k) - S_{k-1})`.
//!
//! `{σ ≥ k}` and `M_{k-1}` are known before `ξ_k` is drawn, so `E Z` is the
//! crossing probability. When `σ` is independent of the walk the indicator
//! `1{σ ≥ k}` is replaced by `P(σ ≥ k)` and the walk runs to the cap.

use serde::{Deserialize, Serialize};

use crate::boundary::Boundary;
use crate::dist::TailDistribution;
use crate::error::{Error, Result};
use crate::hfunc::h_sum;
use crate::rules::{tail_sequence_with_threads, AnalyticTail, RuleState, Step, StoppingRule, TailSequence};
use crate::shard::{self, resolve_threads, run_sharded, LANE_AUX, LANE_INCREMENTS};
use crate::stats::{clopper_pearson, normal_ci, Moments, Z95};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Crude,
    OneBigJump,
    Both,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Crude => "crude",
            Estimator::OneBigJump => "one_big_jump",
            Estimator::Both => "both",
        }
    }

    fn crude(self) -> bool {
        matches!(self, Estimator::Crude | Estimator::Both)
    }

    fn obj(self) -> bool {
        matches!(self, Estimator::OneBigJump | Estimator::Both)
    }
}

fn default_shard() -> u64 {
    8192
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkConfig {
    pub dist: TailDistribution,
    pub boundary: Boundary,
    pub rule: StoppingRule,
    pub x_grid: Vec<f64>,
    pub horizon_cap: u64,
    pub n_replications: u64,
    pub master_seed: u64,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Paths per shard; part of the result's identity, unlike `threads`.
    #[serde(default = "default_shard")]
    pub shard_size: u64,
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_cap < 1 {
            return Err(Error::invalid("horizon_cap must be at least 1"));
        }
        if self.x_grid.is_empty() {
            return Err(Error::invalid("x_grid must be nonempty"));
        }
        if self.x_grid.iter().any(|x| !x.is_finite()) || self.x_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("x_grid must be finite and strictly ascending"));
        }
        if self.n_replications < 1 {
            return Err(Error::invalid("n_replications must be at least 1"));
        }
        if self.shard_size < 1 {
            return Err(Error::invalid("shard_size must be at least 1"));
        }
        self.rule.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingEstimate {
    pub x: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub ci_95: (f64, f64),
    pub n_samples: u64,
    /// Paths whose own trajectory crossed `x`.
    pub n_crossings: u64,
    pub cap_hit_fraction: f64,
    /// Set when part of the probability mass lies past the horizon cap.
    pub lower_bound: bool,
    /// Rough size of the mass missed past the cap, when a linear
    /// boundary tail makes it computable.
    pub cap_remainder_hint: Option<f64>,
    pub estimator: Estimator,
}

#[derive(Debug, Clone)]
struct Acc {
    /// `hist[j]` paths ended with exactly `j` grid points crossed.
    hist: Vec<u64>,
    obj: Vec<Moments>,
    crude_cap_hits: u64,
    obj_cap_hits: u64,
}

impl Acc {
    fn new(k: usize) -> Self {
        Self {
            hist: vec![0; k + 1],
            obj: vec![Moments::default(); k],
            crude_cap_hits: 0,
            obj_cap_hits: 0,
        }
    }

    fn merge(&mut self, o: &Acc) {
        for (a, b) in self.hist.iter_mut().zip(&o.hist) {
            *a += b;
        }
        for (a, b) in self.obj.iter_mut().zip(&o.obj) {
            a.merge(b);
        }
        self.crude_cap_hits += o.crude_cap_hits;
        self.obj_cap_hits += o.obj_cap_hits;
    }
}

struct PathCtx<'a> {
    dist: &'a TailDistribution,
    rule: &'a StoppingRule,
    xs: &'a [f64],
    cap: u64,
    crude: bool,
    obj: bool,
    /// `P(σ ≥ k)` for the conditional weights, when `σ` is independent.
    rb: Option<AnalyticTail>,
    /// `g(0..=cap)`; shared by every path.
    g: Vec<f64>,
}

impl PathCtx<'_> {
    fn run<R: rand::Rng, A: rand::Rng>(&self, rng: &mut R, aux: &mut A, acc: &mut Acc, z: &mut [f64]) {
        let k_len = self.xs.len();
        let mut st = RuleState::start(self.rule, aux);
        let m0 = -self.g[0];
        let mut crude_active = self.crude && !st.stopped_at_start();
        let mut m_crude = m0;
        // largest grid index not yet crossed, as a count of crossed points
        let crossed_from = |m: f64| self.xs.partition_point(|&x| x < m);
        let mut obj_active = self.obj;
        let mut m_obj = m0;
        if self.obj {
            let c0 = crossed_from(m0);
            z[..c0].fill(1.0);
            z[c0..].fill(0.0);
            if c0 == k_len {
                obj_active = false;
            }
            if self.rb.is_none() && st.stopped_at_start() {
                obj_active = false;
            }
        }
        let mut s = 0.0;
        let mut k = 0u64;
        while (crude_active || obj_active) && k < self.cap {
            k += 1;
            let gk = self.g[k as usize];
            if obj_active {
                let w = match &self.rb {
                    Some(t) => t.at(k),
                    None => 1.0,
                };
                if w == 0.0 {
                    obj_active = false;
                } else if gk.is_finite() {
                    let first = crossed_from(m_obj);
                    for i in first..k_len {
                        z[i] += w * self.dist.tail(self.xs[i] + gk - s);
                    }
                }
            }
            if !(crude_active || obj_active) {
                break;
            }
            let xi = self.dist.sample(rng);
            s += xi;
            let level = s - gk;
            if crude_active {
                match st.observe(k, s, xi) {
                    Step::Continue => m_crude = m_crude.max(level),
                    Step::StopIncluding => {
                        m_crude = m_crude.max(level);
                        crude_active = false;
                    }
                    Step::StopExcluding => crude_active = false,
                }
            }
            if obj_active {
                m_obj = m_obj.max(level);
                if self.rb.is_none() {
                    // sampled σ: the path and the rule advance together
                    if !self.crude {
                        match st.observe(k, s, xi) {
                            Step::Continue => {}
                            _ => obj_active = false,
                        }
                    } else if !crude_active {
                        obj_active = false;
                    }
                }
                if crossed_from(m_obj) == k_len {
                    obj_active = false;
                }
            }
        }
        if self.crude {
            if crude_active {
                acc.crude_cap_hits += 1;
            }
            acc.hist[crossed_from(m_crude)] += 1;
        }
        if self.obj {
            if obj_active {
                let more = match &self.rb {
                    Some(t) => t.at(self.cap + 1) > 0.0,
                    None => true,
                };
                if more {
                    acc.obj_cap_hits += 1;
                }
            }
            if !self.crude {
                acc.hist[crossed_from(m_obj)] += 1;
            }
            for (m, &v) in acc.obj.iter_mut().zip(z.iter()) {
                m.push(v);
            }
        }
    }
}

fn boundary_table(b: &Boundary, cap: u64) -> Vec<f64> {
    (0..=cap).map(|n| b.eval(n)).collect()
}

fn remainder_hint(cfg: &WalkConfig, x: f64, p_beyond: f64) -> Option<f64> {
    let (_, slope) = cfg.boundary.linear_tail()?;
    if slope <= 0.0 || p_beyond <= 0.0 {
        return None;
    }
    let y = x + cfg.boundary.eval(cfg.horizon_cap);
    cfg.dist.tail_integral(y).ok().map(|v| p_beyond * v / slope)
}

/// Crossing estimates on `cfg.x_grid` with the configured estimator(s).
/// With [`Estimator::Both`] the crude rows come first.
pub fn simulate_crossing(cfg: &WalkConfig) -> Result<Vec<CrossingEstimate>> {
    simulate_with(cfg, cfg.estimator)
}

/// The conditional estimator alone.
pub fn one_big_jump_estimate(cfg: &WalkConfig) -> Result<Vec<CrossingEstimate>> {
    simulate_with(cfg, Estimator::OneBigJump)
}

fn simulate_with(cfg: &WalkConfig, est: Estimator) -> Result<Vec<CrossingEstimate>> {
    cfg.validate()?;
    let rb = if est.obj() { cfg.rule.independent_tail() } else { None };
    if est.obj() && rb.is_none() && !cfg.rule.is_stopping_time() {
        return Err(Error::Unsupported(
            "the one-big-jump estimator needs a genuine stopping time".into(),
        ));
    }
    let ctx = PathCtx {
        dist: &cfg.dist,
        rule: &cfg.rule,
        xs: &cfg.x_grid,
        cap: cfg.horizon_cap,
        crude: est.crude(),
        obj: est.obj(),
        rb,
        g: boundary_table(&cfg.boundary, cfg.horizon_cap),
    };
    let k_len = cfg.x_grid.len();
    let threads = resolve_threads(cfg.threads);
    let parts = run_sharded(cfg.n_replications, cfg.shard_size, threads, |shard_idx, count| {
        let mut rng = shard::shard_rng(cfg.master_seed, shard_idx, LANE_INCREMENTS);
        let mut aux = shard::shard_rng(cfg.master_seed, shard_idx, LANE_AUX);
        let mut acc = Acc::new(k_len);
        let mut z = vec![0.0; k_len];
        for _ in 0..count {
            ctx.run(&mut rng, &mut aux, &mut acc, &mut z);
        }
        acc
    })?;
    let mut acc = Acc::new(k_len);
    for p in &parts {
        acc.merge(p);
    }
    let n = cfg.n_replications;
    // crossings of grid point i: paths that crossed more than i points
    let mut crossings = vec![0u64; k_len];
    let mut running = 0;
    for i in (0..k_len).rev() {
        running += acc.hist[i + 1];
        crossings[i] = running;
    }
    let mut out = Vec::new();
    if est.crude() {
        let cap_frac = acc.crude_cap_hits as f64 / n as f64;
        for (i, &x) in cfg.x_grid.iter().enumerate() {
            let k = crossings[i];
            let p = k as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let ci = if k >= 30 { normal_ci(p, se) } else { clopper_pearson(k, n, 0.95) };
            out.push(CrossingEstimate {
                x,
                p_hat: p,
                stderr: se,
                ci_95: ci,
                n_samples: n,
                n_crossings: k,
                cap_hit_fraction: cap_frac,
                lower_bound: acc.crude_cap_hits > 0,
                cap_remainder_hint: if acc.crude_cap_hits > 0 { remainder_hint(cfg, x, cap_frac) } else { None },
                estimator: Estimator::Crude,
            });
        }
    }
    if est.obj() {
        if ctx.rb.is_none() && acc.obj_cap_hits > 0 {
            return Err(Error::Unresolved {
                unresolved: acc.obj_cap_hits,
                total: n,
            });
        }
        let cap_frac = acc.obj_cap_hits as f64 / n as f64;
        let p_beyond = ctx.rb.as_ref().map_or(0.0, |t| t.at(cfg.horizon_cap + 1));
        for (i, &x) in cfg.x_grid.iter().enumerate() {
            let m = &acc.obj[i];
            let p = m.mean().clamp(0.0, 1.0);
            let se = m.stderr();
            let lower = acc.obj_cap_hits > 0;
            out.push(CrossingEstimate {
                x,
                p_hat: p,
                stderr: se,
                ci_95: normal_ci(p, se),
                n_samples: n,
                n_crossings: crossings[i],
                cap_hit_fraction: cap_frac,
                lower_bound: lower,
                cap_remainder_hint: if lower { remainder_hint(cfg, x, p_beyond) } else { None },
                estimator: Estimator::OneBigJump,
            });
        }
    }
    Ok(out)
}

/// Exact `P(M^g_{σ ∧ N} > x)` for a lattice law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeDpResult {
    pub x_grid: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Widest per-step state vector.
    pub state_space: u64,
    pub cells: u128,
    pub horizon: u64,
}

pub const DEFAULT_CELL_BUDGET: u128 = 100_000_000;

/// Lattice layout: atoms at `a0 + step·k_j`.
struct Grid {
    a0: f64,
    step: f64,
    offsets: Vec<(usize, f64)>,
    k_max: usize,
}

fn lattice_grid(dist: &TailDistribution) -> Result<Grid> {
    let atoms = dist
        .atoms()
        .ok_or_else(|| Error::Unsupported("the lattice oracle needs a lattice law".into()))?;
    let a0 = atoms[0].0;
    if atoms.len() == 1 {
        return Ok(Grid {
            a0,
            step: 1.0,
            offsets: vec![(0, 1.0)],
            k_max: 0,
        });
    }
    let step = atoms.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min);
    let mut offsets = Vec::with_capacity(atoms.len());
    for &(v, p) in &atoms {
        let r = (v - a0) / step;
        let k = r.round();
        if (r - k).abs() > 1e-9 * r.abs().max(1.0) {
            return Err(Error::Unsupported("lattice support must be a uniform grid".into()));
        }
        offsets.push((k as usize, p));
    }
    let k_max = offsets.last().unwrap().0;
    Ok(Grid { a0, step, offsets, k_max })
}

/// Forward DP over `(n, S_n)`, absorbing on crossing and on stopping.
pub fn lattice_dp(
    dist: &TailDistribution,
    b: &Boundary,
    rule: &StoppingRule,
    x_grid: &[f64],
    horizon: u64,
    cell_budget: u128,
) -> Result<LatticeDpResult> {
    let grid = lattice_grid(dist)?;
    let stops: Box<dyn Fn(u64, f64) -> bool> = match *rule {
        StoppingRule::ConstantN { n } => Box::new(move |k, _| k >= n),
        StoppingRule::TauA { a } => Box::new(move |k, s| s < a * k as f64),
        StoppingRule::RhoA { a } => Box::new(move |k, s| s > -a * k as f64),
        StoppingRule::TauC { c } => Box::new(move |k, s| s - c * k as f64 <= 0.0),
        StoppingRule::FirstAscent => Box::new(|_, s| s > 0.0),
        _ => {
            return Err(Error::Unsupported(
                "lattice oracle supports constant_n, tau_a, rho_a, tau_c, first_ascent".into(),
            ))
        }
    };
    let horizon = match *rule {
        StoppingRule::ConstantN { n } => n.min(horizon),
        _ => horizon,
    };
    let h = horizon as u128;
    let width = grid.k_max as u128;
    let per_x = h + width * h * (h + 1) / 2 + 1;
    let cells = per_x * x_grid.len() as u128;
    if cells > cell_budget {
        return Err(Error::StateBudget {
            required: cells,
            budget: cell_budget,
        });
    }
    let g: Vec<f64> = (0..=horizon).map(|n| b.eval(n)).collect();
    let mut probs = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        if -g[0] > x {
            probs.push(1.0);
            continue;
        }
        if matches!(*rule, StoppingRule::ConstantN { n: 0 }) {
            probs.push(0.0);
            continue;
        }
        let mut crossed = 0.0;
        let mut cur = vec![1.0f64];
        for n in 1..=horizon {
            let mut next = vec![0.0f64; cur.len() + grid.k_max];
            for (k, &p) in cur.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for &(o, q) in &grid.offsets {
                    next[k + o] += p * q;
                }
            }
            let base = n as f64 * grid.a0;
            for (k, p) in next.iter_mut().enumerate() {
                if *p == 0.0 {
                    continue;
                }
                let s = base + grid.step * k as f64;
                if s - g[n as usize] > x {
                    crossed += *p;
                    *p = 0.0;
                } else if stops(n, s) {
                    *p = 0.0;
                }
            }
            cur = next;
        }
        probs.push(crossed.min(1.0));
    }
    let state_space = (grid.k_max as u64) * horizon + 1;
    Ok(LatticeDpResult {
        x_grid: x_grid.to_vec(),
        probabilities: probs,
        state_space,
        cells,
        horizon,
    })
}

/// One row of a ratio scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub x: f64,
    pub p_hat: f64,
    pub p_stderr: f64,
    pub p_ci: (f64, f64),
    pub h: f64,
    pub h_bound: f64,
    pub h_stderr: Option<f64>,
    pub ratio: f64,
    pub ratio_ci: (f64, f64),
    /// Combined relative standard error of the ratio.
    pub rel_err: f64,
    pub lower_bound: bool,
}

/// Joins crossing estimates with `H` on the same grid.
pub fn ratio_scan(
    cfg: &WalkConfig,
    estimates: &[CrossingEstimate],
    tail: &TailSequence,
    rel_tol: f64,
) -> Result<Vec<RatioRow>> {
    estimates
        .iter()
        .map(|e| {
            let h = h_sum(tail, &cfg.boundary, &cfg.dist, e.x, rel_tol)?;
            let ratio = if h.value > 0.0 { e.p_hat / h.value } else { f64::NAN };
            let rp = if e.p_hat > 0.0 { e.stderr / e.p_hat } else { f64::INFINITY };
            let rh = h.propagated_stderr.map_or(0.0, |s| if h.value > 0.0 { s / h.value } else { 0.0 });
            let rel_err = (rp * rp + rh * rh).sqrt();
            let ratio_ci = if e.p_hat > 0.0 {
                let se = ratio * rel_err;
                ((ratio - Z95 * se).max(0.0), ratio + Z95 * se)
            } else {
                (0.0, e.ci_95.1 / h.value)
            };
            Ok(RatioRow {
                x: e.x,
                p_hat: e.p_hat,
                p_stderr: e.stderr,
                p_ci: e.ci_95,
                h: h.value,
                h_bound: h.truncation_bound,
                h_stderr: h.propagated_stderr,
                ratio,
                ratio_ci,
                rel_err,
                lower_bound: e.lower_bound,
            })
        })
        .collect()
}

/// Simulates, builds the tail sequence of `σ`, and joins the two. The
/// one-big-jump rows are used when both estimators run.
pub fn run_ratio_scan(cfg: &WalkConfig, sigma_paths: u64, rel_tol: f64) -> Result<Vec<RatioRow>> {
    let est = simulate_crossing(cfg)?;
    let pick = if cfg.estimator == Estimator::Both {
        Estimator::OneBigJump
    } else {
        cfg.estimator
    };
    let chosen: Vec<CrossingEstimate> = est.into_iter().filter(|e| e.estimator == pick).collect();
    let tail = tail_sequence_with_threads(
        &cfg.rule,
        &cfg.dist,
        cfg.horizon_cap,
        sigma_paths,
        shard::derive(cfg.master_seed, 0x5151),
        resolve_threads(cfg.threads),
    )?;
    ratio_scan(cfg, &chosen, &tail, rel_tol)
}
