//! Stopping rules and the tail sequences `P(σ ≥ n)` they induce.
//!
//! Rules run incrementally: after each increment the rule says whether to
//! keep going, stop at the current index, or stop one index earlier. Only
//! the anticipating rules ever use the last answer.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::TailDistribution;
use crate::error::{Error, Result};
use crate::shard::{self, run_sharded, LANE_AUX, LANE_INCREMENTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoppingRule {
    /// `σ ≡ n`.
    ConstantN { n: u64 },
    /// First `n ≥ 1` with `S_n < a·n`.
    TauA { a: f64 },
    /// First `n ≥ 1` with `S_n > -a·n`.
    RhoA { a: f64 },
    /// First `n ≥ 1` with `S_n - c·n ≤ 0`.
    TauC { c: f64 },
    /// First `n ≥ 1` with `S_n > 0`.
    FirstAscent,
    /// Independent of the walk, `P(σ ≥ n) = min(1, k1·n^(-alpha))`.
    IndependentPowerTail { k1: f64, alpha: f64 },
    /// Independent of the walk with `P(σ ≥ n) = tail[n-1]`, zero past the end.
    IndependentTail { tail: Vec<f64> },
    /// `σ = ∞` with probability `p`, otherwise the inner rule.
    WithInfinityMass { p: f64, inner: Box<StoppingRule> },
    /// Pointwise minimum.
    Min { first: Box<StoppingRule>, second: Box<StoppingRule> },
    /// `σ = 1` if `ξ₁ ≤ a`, else `σ = 2`.
    FirstStepThreshold { a: f64 },
    /// `min{n : S_n > a} - 1`; not a stopping time.
    FirstPassageMinusOne { a: f64 },
    /// `min{n : ξ_n > a} - 1`; not a stopping time.
    FirstBigJumpMinusOne { a: f64 },
}

/// Answer of a rule after seeing step `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Continue,
    /// `σ = n`.
    StopIncluding,
    /// `σ = n - 1`.
    StopExcluding,
}

/// Outcome of [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Stopped(u64),
    Unresolved,
    Infinite,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and positive, got {v}")))
    }
}

impl StoppingRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            StoppingRule::ConstantN { .. } | StoppingRule::FirstAscent => Ok(()),
            StoppingRule::TauA { a } | StoppingRule::RhoA { a } => check_positive("a", *a),
            StoppingRule::TauC { c } => {
                if c.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("c must be finite"))
                }
            }
            StoppingRule::IndependentPowerTail { k1, alpha } => {
                check_positive("k1", *k1)?;
                check_positive("alpha", *alpha)
            }
            StoppingRule::IndependentTail { tail } => {
                let mut prev = 1.0;
                for &t in tail {
                    if !(0.0..=prev).contains(&t) {
                        return Err(Error::invalid("independent tail must be nonincreasing within [0, 1]"));
                    }
                    prev = t;
                }
                Ok(())
            }
            StoppingRule::WithInfinityMass { p, inner } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(Error::invalid(format!("p must lie in (0, 1], got {p}")));
                }
                inner.validate()
            }
            StoppingRule::Min { first, second } => {
                first.validate()?;
                second.validate()
            }
            StoppingRule::FirstStepThreshold { a }
            | StoppingRule::FirstPassageMinusOne { a }
            | StoppingRule::FirstBigJumpMinusOne { a } => {
                if a.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("a must be finite"))
                }
            }
        }
    }

    /// False when `{σ ≤ n}` can depend on `ξ_{n+1}`.
    pub fn is_stopping_time(&self) -> bool {
        match self {
            StoppingRule::FirstPassageMinusOne { .. } | StoppingRule::FirstBigJumpMinusOne { .. } => false,
            StoppingRule::WithInfinityMass { inner, .. } => inner.is_stopping_time(),
            StoppingRule::Min { first, second } => first.is_stopping_time() && second.is_stopping_time(),
            _ => true,
        }
    }

    /// Tail of `σ` when `σ` is independent of the walk.
    pub fn independent_tail(&self) -> Option<AnalyticTail> {
        match self {
            StoppingRule::ConstantN { n } => Some(AnalyticTail::Constant { n: *n }),
            StoppingRule::IndependentPowerTail { k1, alpha } => Some(AnalyticTail::Power {
                k1: *k1,
                alpha: *alpha,
            }),
            StoppingRule::IndependentTail { tail } => Some(AnalyticTail::Explicit { values: tail.clone() }),
            StoppingRule::WithInfinityMass { p, inner } => inner.independent_tail().map(|t| AnalyticTail::InfinityMass {
                p: *p,
                inner: Box::new(t),
            }),
            StoppingRule::Min { first, second } => match (first.independent_tail(), second.independent_tail()) {
                (Some(a), Some(b)) => Some(AnalyticTail::Product(Box::new(a), Box::new(b))),
                _ => None,
            },
            _ => None,
        }
    }

    /// Closed-form tail where one exists, including a few path rules.
    pub fn analytic_tail(&self, dist: &TailDistribution) -> Option<AnalyticTail> {
        if let Some(t) = self.independent_tail() {
            return Some(t);
        }
        match self {
            StoppingRule::FirstStepThreshold { a } => Some(AnalyticTail::Explicit {
                values: vec![1.0, dist.tail(*a)],
            }),
            StoppingRule::FirstBigJumpMinusOne { a } => {
                // σ ≥ n iff the first n increments are all ≤ a
                let q = dist.cdf(*a);
                if q >= 1.0 {
                    Some(AnalyticTail::InfinityMass {
                        p: 1.0,
                        inner: Box::new(AnalyticTail::Constant { n: 0 }),
                    })
                } else {
                    Some(AnalyticTail::Geometric { q })
                }
            }
            StoppingRule::WithInfinityMass { p, inner } => inner.analytic_tail(dist).map(|t| AnalyticTail::InfinityMass {
                p: *p,
                inner: Box::new(t),
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
enum State {
    /// Stops at a preset index; `None` never stops.
    Fixed(Option<u64>),
    TauA(f64),
    RhoA(f64),
    TauC(f64),
    FirstAscent,
    FirstStep(f64),
    PassMinusOne(f64),
    BigJumpMinusOne(f64),
    Min(Box<State>, Box<State>),
}

/// Running state of one rule on one path.
#[derive(Debug, Clone)]
pub struct RuleState {
    state: State,
}

fn sample_fixed<R: Rng + ?Sized>(tail: &AnalyticTail, aux: &mut R) -> Option<u64> {
    let u = 1.0 - aux.random::<f64>();
    tail.inverse(u)
}

fn build<R: Rng + ?Sized>(rule: &StoppingRule, aux: &mut R) -> State {
    if let Some(t) = rule.independent_tail() {
        return State::Fixed(sample_fixed(&t, aux));
    }
    match rule {
        StoppingRule::TauA { a } => State::TauA(*a),
        StoppingRule::RhoA { a } => State::RhoA(*a),
        StoppingRule::TauC { c } => State::TauC(*c),
        StoppingRule::FirstAscent => State::FirstAscent,
        StoppingRule::FirstStepThreshold { a } => State::FirstStep(*a),
        StoppingRule::FirstPassageMinusOne { a } => State::PassMinusOne(*a),
        StoppingRule::FirstBigJumpMinusOne { a } => State::BigJumpMinusOne(*a),
        StoppingRule::WithInfinityMass { p, inner } => {
            // the Bernoulli draw comes first, before the inner rule sees anything
            let u: f64 = aux.random();
            if u < *p {
                State::Fixed(None)
            } else {
                build(inner, aux)
            }
        }
        StoppingRule::Min { first, second } => State::Min(Box::new(build(first, aux)), Box::new(build(second, aux))),
        _ => unreachable!("independent rules handled above"),
    }
}

impl State {
    fn at_start(&self) -> bool {
        match self {
            State::Fixed(Some(0)) => true,
            State::Min(a, b) => a.at_start() || b.at_start(),
            _ => false,
        }
    }

    fn never(&self) -> bool {
        match self {
            State::Fixed(None) => true,
            State::Min(a, b) => a.never() && b.never(),
            _ => false,
        }
    }

    fn observe(&mut self, n: u64, s: f64, xi: f64) -> Step {
        let stop = |b: bool| if b { Step::StopIncluding } else { Step::Continue };
        match self {
            State::Fixed(k) => stop(*k == Some(n)),
            State::TauA(a) => stop(s < *a * n as f64),
            State::RhoA(a) => stop(s > -*a * n as f64),
            State::TauC(c) => stop(s - *c * n as f64 <= 0.0),
            State::FirstAscent => stop(s > 0.0),
            State::FirstStep(a) => stop(n >= 2 || xi <= *a),
            State::PassMinusOne(a) => {
                if s > *a {
                    Step::StopExcluding
                } else {
                    Step::Continue
                }
            }
            State::BigJumpMinusOne(a) => {
                if xi > *a {
                    Step::StopExcluding
                } else {
                    Step::Continue
                }
            }
            State::Min(a, b) => {
                let (x, y) = (a.observe(n, s, xi), b.observe(n, s, xi));
                if x == Step::StopExcluding || y == Step::StopExcluding {
                    Step::StopExcluding
                } else if x == Step::StopIncluding || y == Step::StopIncluding {
                    Step::StopIncluding
                } else {
                    Step::Continue
                }
            }
        }
    }
}

impl RuleState {
    /// Draws any auxiliary randomness the rule needs.
    pub fn start<R: Rng + ?Sized>(rule: &StoppingRule, aux: &mut R) -> Self {
        Self {
            state: build(rule, aux),
        }
    }

    /// `σ = 0`.
    pub fn stopped_at_start(&self) -> bool {
        self.state.at_start()
    }

    /// The rule is known never to stop.
    pub fn never_stops(&self) -> bool {
        self.state.never()
    }

    /// Feeds step `n ≥ 1` with partial sum `s = S_n` and increment `xi = ξ_n`.
    pub fn observe(&mut self, n: u64, s: f64, xi: f64) -> Step {
        self.state.observe(n, s, xi)
    }
}

/// Runs `rule` over the walk prefix `S_1..S_T`.
pub fn evaluate(rule: &StoppingRule, path: &[f64], aux_seed: u64) -> Resolution {
    let mut aux = ChaCha8Rng::seed_from_u64(aux_seed);
    let mut st = RuleState::start(rule, &mut aux);
    if st.stopped_at_start() {
        return Resolution::Stopped(0);
    }
    let mut prev = 0.0;
    for (i, &s) in path.iter().enumerate() {
        let n = i as u64 + 1;
        match st.observe(n, s, s - prev) {
            Step::Continue => {}
            Step::StopIncluding => return Resolution::Stopped(n),
            Step::StopExcluding => return Resolution::Stopped(n - 1),
        }
        prev = s;
    }
    if st.never_stops() {
        Resolution::Infinite
    } else {
        Resolution::Unresolved
    }
}

/// Closed-form `P(σ ≥ n)`.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticTail {
    Constant { n: u64 },
    Power { k1: f64, alpha: f64 },
    /// `P(σ ≥ n) = values[n-1]`, zero past the end.
    Explicit { values: Vec<f64> },
    /// `P(σ ≥ n) = q^n`.
    Geometric { q: f64 },
    /// `p + (1-p)·inner`.
    InfinityMass { p: f64, inner: Box<AnalyticTail> },
    /// Tail of the minimum of two independent rules.
    Product(Box<AnalyticTail>, Box<AnalyticTail>),
}

/// Decay class of an analytic tail, used for sums over `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay {
    /// Zero after this index.
    FiniteSupport(u64),
    /// Bounded by `k·n^(-alpha)`, asymptotically equal for a pure power.
    Power { k: f64, alpha: f64 },
    /// Bounded by `q^n`.
    Geometric { q: f64 },
    /// Tends to a positive constant.
    Mass(f64),
}

impl AnalyticTail {
    /// `P(σ ≥ n)`; equals 1 at `n = 0`.
    pub fn at(&self, n: u64) -> f64 {
        if n == 0 {
            return 1.0;
        }
        match self {
            AnalyticTail::Constant { n: k } => {
                if n <= *k {
                    1.0
                } else {
                    0.0
                }
            }
            AnalyticTail::Power { k1, alpha } => (k1 * (n as f64).powf(-alpha)).min(1.0),
            AnalyticTail::Explicit { values } => values.get((n - 1) as usize).copied().unwrap_or(0.0),
            AnalyticTail::Geometric { q } => q.powf(n as f64),
            AnalyticTail::InfinityMass { p, inner } => p + (1.0 - p) * inner.at(n),
            AnalyticTail::Product(a, b) => a.at(n) * b.at(n),
        }
    }

    /// Nonincreasing continuation to real `t > 0` that agrees with
    /// [`Self::at`] on the integers. Step tails use `at(⌈t⌉)`.
    pub fn continuous(&self, t: f64) -> f64 {
        match self {
            AnalyticTail::Power { k1, alpha } => {
                if t <= 0.0 {
                    1.0
                } else {
                    (k1 * t.powf(-alpha)).min(1.0)
                }
            }
            AnalyticTail::Geometric { q } => q.powf(t.max(0.0)),
            AnalyticTail::InfinityMass { p, inner } => p + (1.0 - p) * inner.continuous(t),
            AnalyticTail::Product(a, b) => a.continuous(t) * b.continuous(t),
            _ => self.at(t.max(0.0).ceil() as u64),
        }
    }

    pub fn mass_at_infinity(&self) -> f64 {
        match self {
            AnalyticTail::InfinityMass { p, inner } => p + (1.0 - p) * inner.mass_at_infinity(),
            AnalyticTail::Product(a, b) => a.mass_at_infinity() * b.mass_at_infinity(),
            _ => 0.0,
        }
    }

    pub fn decay(&self) -> Decay {
        match self {
            AnalyticTail::Constant { n } => Decay::FiniteSupport(*n),
            AnalyticTail::Explicit { values } => {
                let last = values.iter().rposition(|&v| v > 0.0).map_or(0, |i| i as u64 + 1);
                Decay::FiniteSupport(last)
            }
            AnalyticTail::Power { k1, alpha } => Decay::Power { k: *k1, alpha: *alpha },
            AnalyticTail::Geometric { q } => Decay::Geometric { q: *q },
            AnalyticTail::InfinityMass { p, inner } => {
                if *p > 0.0 {
                    Decay::Mass(self.mass_at_infinity())
                } else {
                    inner.decay()
                }
            }
            AnalyticTail::Product(a, b) => match (a.decay(), b.decay()) {
                (Decay::FiniteSupport(x), Decay::FiniteSupport(y)) => Decay::FiniteSupport(x.min(y)),
                (Decay::FiniteSupport(x), _) | (_, Decay::FiniteSupport(x)) => Decay::FiniteSupport(x),
                (Decay::Geometric { q: x }, Decay::Geometric { q: y }) => Decay::Geometric { q: x * y },
                (g @ Decay::Geometric { .. }, _) | (_, g @ Decay::Geometric { .. }) => g,
                (Decay::Power { k: k1, alpha: a1 }, Decay::Power { k: k2, alpha: a2 }) => Decay::Power {
                    k: k1 * k2,
                    alpha: a1 + a2,
                },
                (p @ Decay::Power { .. }, Decay::Mass(_)) | (Decay::Mass(_), p @ Decay::Power { .. }) => p,
                (Decay::Mass(x), Decay::Mass(y)) => Decay::Mass(x * y),
            },
        }
    }

    /// Last index with positive tail, if the support is finite.
    pub fn support_end(&self) -> Option<u64> {
        match self.decay() {
            Decay::FiniteSupport(n) => Some(n),
            _ => None,
        }
    }

    /// Fixes rounding in a closed-form inverse so that `u ≤ at(v)` and
    /// `u > at(v + 1)` hold exactly.
    fn polish(&self, u: f64, v: f64) -> Option<u64> {
        if v >= (u64::MAX / 2) as f64 {
            return None;
        }
        let mut v = v.max(0.0) as u64;
        while v > 0 && u > self.at(v) {
            v -= 1;
        }
        while u <= self.at(v + 1) {
            v += 1;
        }
        Some(v)
    }

    /// `σ` for a uniform `u ∈ (0, 1]`: the largest `n` with `u ≤ P(σ ≥ n)`;
    /// `None` for `σ = ∞`.
    pub fn inverse(&self, u: f64) -> Option<u64> {
        match self {
            AnalyticTail::Constant { n } => Some(*n),
            AnalyticTail::Power { k1, alpha } => {
                if u > *k1 {
                    return Some(0);
                }
                let v = (k1 / u).powf(1.0 / alpha).floor();
                self.polish(u, v)
            }
            AnalyticTail::Explicit { values } => Some(values.partition_point(|&t| u <= t) as u64),
            AnalyticTail::Geometric { q } => {
                if u > *q {
                    return Some(0);
                }
                let v = (u.ln() / q.ln()).floor();
                self.polish(u, v)
            }
            // composite tails: bisection on the integer tail
            _ => {
                let mass = self.mass_at_infinity();
                if u <= mass {
                    return None;
                }
                if u > self.at(1) {
                    return Some(0);
                }
                let mut lo = 1u64;
                let mut hi = 2u64;
                while u <= self.at(hi) {
                    lo = hi;
                    hi = hi.saturating_mul(2);
                    if hi == u64::MAX {
                        return None;
                    }
                }
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if u <= self.at(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(lo)
            }
        }
    }
}

/// `P(σ ≥ n)` estimated from simulated paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTail {
    pub n_paths: u64,
    /// `counts[k]` paths had `σ = k`, for `k = 0..=n_max`.
    pub counts: Vec<u64>,
    /// Paths with `σ > n_max`, including never-stopping ones.
    pub beyond: u64,
    /// Known probability that `σ = ∞`, mixed in on top of the simulated rule.
    pub mass: f64,
}

impl EmpiricalTail {
    pub fn n_max(&self) -> u64 {
        self.counts.len() as u64 - 1
    }

    fn fraction_ge(&self, n: u64) -> f64 {
        let below: u64 = self.counts.iter().take(n as usize).sum();
        (self.n_paths - below.min(self.n_paths)) as f64 / self.n_paths as f64
    }

    /// Fraction of simulated paths still running after `n_max`.
    pub fn beyond_fraction(&self) -> f64 {
        self.beyond as f64 / self.n_paths as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TailSource {
    Analytic(AnalyticTail),
    Empirical(EmpiricalTail),
}

/// `P(σ ≥ n)` for `n ≥ 1`, analytic or estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct TailSequence {
    pub source: TailSource,
    /// Indices tabulated for export.
    pub n_max: u64,
    /// Cumulative sums of the empirical tail, cached for `at`.
    cum: Vec<f64>,
}

/// `Eσ`, or infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanSigma {
    Finite(f64),
    Infinite,
}

impl MeanSigma {
    pub fn finite(self) -> Option<f64> {
        match self {
            MeanSigma::Finite(v) => Some(v),
            MeanSigma::Infinite => None,
        }
    }
}

impl TailSequence {
    pub fn analytic(tail: AnalyticTail, n_max: u64) -> Self {
        Self {
            source: TailSource::Analytic(tail),
            n_max,
            cum: Vec::new(),
        }
    }

    pub fn empirical(tail: EmpiricalTail) -> Self {
        let mut cum = Vec::with_capacity(tail.counts.len() + 1);
        // cum[n] = number of paths with σ ≥ n
        let mut ge = tail.n_paths;
        for &c in &tail.counts {
            cum.push(ge as f64);
            ge -= c;
        }
        cum.push(ge as f64);
        Self {
            n_max: tail.n_max(),
            source: TailSource::Empirical(tail),
            cum,
        }
    }

    /// `P(σ ≥ n)`; empirical tails are truncated at `n_max + 1`, where
    /// the value is the fraction still running.
    pub fn at(&self, n: u64) -> f64 {
        match &self.source {
            TailSource::Analytic(t) => t.at(n),
            TailSource::Empirical(e) => {
                // beyond the horizon the still-running fraction is an upper bound
                let idx = (n as usize).min(self.cum.len() - 1);
                e.mass + (1.0 - e.mass) * self.cum[idx] / e.n_paths as f64
            }
        }
    }

    /// Binomial standard error of an empirical value.
    pub fn stderr(&self, n: u64) -> Option<f64> {
        match &self.source {
            TailSource::Analytic(_) => None,
            TailSource::Empirical(e) => {
                let p = e.fraction_ge(n.min(e.n_max() + 1));
                Some((1.0 - e.mass) * (p * (1.0 - p) / e.n_paths as f64).sqrt())
            }
        }
    }

    pub fn mass_at_infinity(&self) -> f64 {
        match &self.source {
            TailSource::Analytic(t) => t.mass_at_infinity(),
            TailSource::Empirical(e) => e.mass,
        }
    }

    pub fn analytic_tail(&self) -> Option<&AnalyticTail> {
        match &self.source {
            TailSource::Analytic(t) => Some(t),
            TailSource::Empirical(_) => None,
        }
    }

    /// Values for `n = 1..=n_max`.
    pub fn values(&self) -> Vec<f64> {
        (1..=self.n_max).map(|n| self.at(n)).collect()
    }

    /// Writes `n,tail,stderr` rows for `n = 1..=n_max`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "tail", "stderr"])?;
        for n in 1..=self.n_max {
            let se = self.stderr(n).map_or(String::new(), |s| format!("{s:e}"));
            w.write_record([n.to_string(), format!("{:e}", self.at(n)), se])?;
        }
        w.flush()?;
        Ok(())
    }
}

const POWER_DIRECT_TERMS: u64 = 1_000_000;

/// `Σ_{n≥1} P(σ ≥ n)`.
pub fn mean_sigma(tail: &TailSequence) -> MeanSigma {
    match &tail.source {
        TailSource::Analytic(t) => match t.decay() {
            Decay::FiniteSupport(last) => MeanSigma::Finite((1..=last).map(|n| t.at(n)).sum()),
            Decay::Mass(_) => MeanSigma::Infinite,
            Decay::Geometric { q } => {
                // sum to where q^n is below the last ulp of the total
                let terms = if q <= 0.0 { 1 } else { ((1e-18f64).ln() / q.ln()).ceil().max(1.0) as u64 };
                let direct: f64 = (1..=terms).map(|n| t.at(n)).sum();
                MeanSigma::Finite(direct)
            }
            Decay::Power { k, alpha } => {
                if alpha <= 1.0 {
                    return MeanSigma::Infinite;
                }
                let direct: f64 = (1..=POWER_DIRECT_TERMS).map(|n| t.at(n)).sum();
                // midpoint estimate of Σ_{n>N} k·n^(-α)
                let rest = k * (POWER_DIRECT_TERMS as f64 + 0.5).powf(1.0 - alpha) / (alpha - 1.0);
                MeanSigma::Finite(direct + rest)
            }
        },
        TailSource::Empirical(e) => {
            if e.mass > 0.0 {
                return MeanSigma::Infinite;
            }
            let direct: f64 = (1..=e.n_max() + 1).map(|n| tail.at(n)).sum();
            if e.beyond == 0 {
                return MeanSigma::Finite(direct);
            }
            // power-law fit on the last octave decides divergence
            let hi = e.n_max() + 1;
            let lo = (hi / 8).max(1);
            let (p_lo, p_hi) = (tail.at(lo), tail.at(hi));
            if p_hi <= 0.0 || p_lo <= p_hi {
                return MeanSigma::Infinite;
            }
            let alpha = (p_lo / p_hi).ln() / (hi as f64 / lo as f64).ln();
            if alpha <= 1.0 {
                MeanSigma::Infinite
            } else {
                MeanSigma::Finite(direct + p_hi * (hi as f64 + 0.5) / (alpha - 1.0))
            }
        }
    }
}

/// Simulates one path until the rule resolves or `n_max` steps pass.
/// Returns `None` for "beyond `n_max`".
pub fn simulate_sigma<R: Rng + ?Sized, A: Rng + ?Sized>(
    rule: &StoppingRule,
    dist: &TailDistribution,
    n_max: u64,
    rng: &mut R,
    aux: &mut A,
) -> Option<u64> {
    let mut st = RuleState::start(rule, aux);
    if st.stopped_at_start() {
        return Some(0);
    }
    if st.never_stops() {
        return None;
    }
    let mut s = 0.0;
    for n in 1..=n_max {
        let xi = dist.sample(rng);
        s += xi;
        match st.observe(n, s, xi) {
            Step::Continue => {}
            Step::StopIncluding => return Some(n),
            Step::StopExcluding => return Some(n - 1),
        }
    }
    None
}

pub const MIN_EMPIRICAL_PATHS: u64 = 10_000;
const SIGMA_SHARD: u64 = 4096;

/// Histogram of `σ` from `n_paths` simulated walks.
pub fn empirical_tail(
    rule: &StoppingRule,
    dist: &TailDistribution,
    n_max: u64,
    n_paths: u64,
    seed: u64,
    threads: usize,
) -> Result<EmpiricalTail> {
    if n_paths < MIN_EMPIRICAL_PATHS {
        return Err(Error::invalid(format!(
            "empirical tails need at least {MIN_EMPIRICAL_PATHS} paths, got {n_paths}"
        )));
    }
    let len = n_max as usize + 1;
    let parts = run_sharded(n_paths, SIGMA_SHARD, threads, |shard_idx, count| {
        let mut rng = shard::shard_rng(seed, shard_idx, LANE_INCREMENTS);
        let mut aux = shard::shard_rng(seed, shard_idx, LANE_AUX);
        let mut counts = vec![0u64; len];
        let mut beyond = 0u64;
        for _ in 0..count {
            match simulate_sigma(rule, dist, n_max, &mut rng, &mut aux) {
                Some(k) => counts[k as usize] += 1,
                None => beyond += 1,
            }
        }
        (counts, beyond)
    })?;
    let mut counts = vec![0u64; len];
    let mut beyond = 0;
    for (c, b) in parts {
        for (acc, v) in counts.iter_mut().zip(c) {
            *acc += v;
        }
        beyond += b;
    }
    Ok(EmpiricalTail {
        n_paths,
        counts,
        beyond,
        mass: 0.0,
    })
}

/// Analytic tail where available, otherwise an empirical estimate from
/// `n_paths` walks of length at most `n_max`.
pub fn tail_sequence(
    rule: &StoppingRule,
    dist: &TailDistribution,
    n_max: u64,
    n_paths: u64,
    seed: u64,
) -> Result<TailSequence> {
    tail_sequence_with_threads(rule, dist, n_max, n_paths, seed, shard::resolve_threads(None))
}

pub fn tail_sequence_with_threads(
    rule: &StoppingRule,
    dist: &TailDistribution,
    n_max: u64,
    n_paths: u64,
    seed: u64,
    threads: usize,
) -> Result<TailSequence> {
    rule.validate()?;
    if let Some(t) = rule.analytic_tail(dist) {
        return Ok(TailSequence::analytic(t, n_max));
    }
    if let StoppingRule::WithInfinityMass { p, inner } = rule {
        let mut e = empirical_tail(inner, dist, n_max, n_paths, seed, threads)?;
        e.mass = *p;
        return Ok(TailSequence::empirical(e));
    }
    Ok(TailSequence::empirical(empirical_tail(rule, dist, n_max, n_paths, seed, threads)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(rule: &StoppingRule, path: &[f64]) -> Resolution {
        evaluate(rule, path, 1)
    }

    #[test]
    fn constant_rule() {
        let r = StoppingRule::ConstantN { n: 3 };
        assert_eq!(eval(&r, &[1.0, 2.0, 3.0, 4.0]), Resolution::Stopped(3));
        assert_eq!(eval(&r, &[1.0, 2.0]), Resolution::Unresolved);
        assert_eq!(eval(&StoppingRule::ConstantN { n: 0 }, &[]), Resolution::Stopped(0));
    }

    #[test]
    fn strictness_of_path_rules() {
        // S_1 = 1 is not < 1·1; S_2 = 1.5 < 2
        assert_eq!(eval(&StoppingRule::TauA { a: 1.0 }, &[1.0, 1.5]), Resolution::Stopped(2));
        assert_eq!(eval(&StoppingRule::TauA { a: 1.0 }, &[-0.5, 3.0]), Resolution::Stopped(1));
        assert_eq!(eval(&StoppingRule::RhoA { a: 1.0 }, &[-2.0, -1.5]), Resolution::Stopped(2));
        // S_1 = -1 is not > -1
        assert_eq!(eval(&StoppingRule::RhoA { a: 1.0 }, &[-1.0, -1.0]), Resolution::Stopped(2));
        // S_1 - 1 = 0 ≤ 0 stops
        assert_eq!(eval(&StoppingRule::TauC { c: 1.0 }, &[1.0]), Resolution::Stopped(1));
        assert_eq!(eval(&StoppingRule::TauC { c: 1.0 }, &[1.5, 2.5, 2.9]), Resolution::Stopped(3));
        // S_n = 0 is not an ascent
        assert_eq!(eval(&StoppingRule::FirstAscent, &[0.0, -1.0, 0.5]), Resolution::Stopped(3));
    }

    #[test]
    fn anticipating_rules() {
        let r = StoppingRule::FirstPassageMinusOne { a: 2.0 };
        assert_eq!(eval(&r, &[1.0, 2.0, 2.5]), Resolution::Stopped(2));
        assert_eq!(eval(&r, &[3.0]), Resolution::Stopped(0));
        assert!(!r.is_stopping_time());
        let j = StoppingRule::FirstBigJumpMinusOne { a: 1.0 };
        assert_eq!(eval(&j, &[0.5, 1.0, 3.0]), Resolution::Stopped(2));
        assert!(StoppingRule::TauA { a: 1.0 }.is_stopping_time());
    }

    #[test]
    fn first_step_threshold() {
        let r = StoppingRule::FirstStepThreshold { a: 1.0 };
        assert_eq!(eval(&r, &[0.5, 9.0]), Resolution::Stopped(1));
        assert_eq!(eval(&r, &[1.5, 9.0]), Resolution::Stopped(2));
    }

    #[test]
    fn min_rule() {
        let r = StoppingRule::Min {
            first: Box::new(StoppingRule::ConstantN { n: 4 }),
            second: Box::new(StoppingRule::FirstAscent),
        };
        assert_eq!(eval(&r, &[-1.0, 0.5, 2.0]), Resolution::Stopped(2));
        assert_eq!(eval(&r, &[-1.0, -2.0, -3.0, -4.0, -5.0]), Resolution::Stopped(4));
        let m = StoppingRule::Min {
            first: Box::new(StoppingRule::FirstPassageMinusOne { a: 0.0 }),
            second: Box::new(StoppingRule::FirstAscent),
        };
        // both see S_2 > 0: one says 2, the other 1
        assert_eq!(eval(&m, &[-1.0, 0.5]), Resolution::Stopped(1));
    }

    #[test]
    fn infinity_mass_resolves_first() {
        let r = StoppingRule::WithInfinityMass {
            p: 1.0,
            inner: Box::new(StoppingRule::ConstantN { n: 1 }),
        };
        assert_eq!(eval(&r, &[1.0, 2.0]), Resolution::Infinite);
        let half = StoppingRule::WithInfinityMass {
            p: 0.5,
            inner: Box::new(StoppingRule::ConstantN { n: 1 }),
        };
        let infinite = (0..2000)
            .filter(|&s| evaluate(&half, &[1.0, 2.0], s) == Resolution::Infinite)
            .count();
        assert!((infinite as f64 - 1000.0).abs() < 150.0);
    }

    #[test]
    fn analytic_tails() {
        let c = AnalyticTail::Constant { n: 5 };
        assert_eq!(c.at(5), 1.0);
        assert_eq!(c.at(6), 0.0);
        let p = AnalyticTail::Power { k1: 1.0, alpha: 0.5 };
        assert_eq!(p.at(4), 0.5);
        let t = TailSequence::analytic(c, 10);
        assert_eq!(mean_sigma(&t), MeanSigma::Finite(5.0));
        assert_eq!(mean_sigma(&TailSequence::analytic(p, 10)), MeanSigma::Infinite);
        let m = StoppingRule::WithInfinityMass {
            p: 0.3,
            inner: Box::new(StoppingRule::ConstantN { n: 2 }),
        };
        let d = TailDistribution::exponential(1.0).unwrap();
        let ts = tail_sequence(&m, &d, 10, 0, 0).unwrap();
        assert_eq!(mean_sigma(&ts), MeanSigma::Infinite);
        assert!((ts.at(3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn power_tail_mean_matches_zeta() {
        // Σ n^-2 = π²/6
        let t = TailSequence::analytic(AnalyticTail::Power { k1: 1.0, alpha: 2.0 }, 1);
        let m = mean_sigma(&t).finite().unwrap();
        assert!((m - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_sampling_matches_tail() {
        let tails = [
            AnalyticTail::Power { k1: 1.0, alpha: 0.7 },
            AnalyticTail::Explicit {
                values: vec![1.0, 0.5, 0.25],
            },
            AnalyticTail::Product(
                Box::new(AnalyticTail::Power { k1: 2.0, alpha: 1.5 }),
                Box::new(AnalyticTail::Constant { n: 7 }),
            ),
            AnalyticTail::Geometric { q: 0.8 },
        ];
        for t in tails {
            for n in 1..6 {
                let p = t.at(n);
                if p == 0.0 {
                    continue;
                }
                // σ ≥ n exactly when u ≤ P(σ ≥ n)
                assert!(t.inverse(p).unwrap() >= n);
                if p < 1.0 {
                    assert!(t.inverse((p * 1.000_001).min(1.0)).unwrap() < n);
                }
            }
        }
    }

    #[test]
    fn continuation_agrees_on_integers() {
        let t = AnalyticTail::InfinityMass {
            p: 0.2,
            inner: Box::new(AnalyticTail::Power { k1: 3.0, alpha: 1.2 }),
        };
        for n in 1..50 {
            assert!((t.continuous(n as f64) - t.at(n)).abs() < 1e-15);
            assert!(t.continuous(n as f64 + 0.5) <= t.at(n));
        }
        let e = AnalyticTail::Explicit { values: vec![1.0, 0.5] };
        assert_eq!(e.continuous(1.5), 0.5);
    }

    #[test]
    fn empirical_tail_is_monotone_with_stderr() {
        let d = TailDistribution::lattice(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let ts = tail_sequence(&StoppingRule::FirstAscent, &d, 40, 20_000, 5).unwrap();
        let v = ts.values();
        assert_eq!(v[0], 1.0);
        assert!(v.windows(2).all(|w| w[1] <= w[0]));
        // P(σ ≥ 2) = 1/2 for the fair walk
        assert!((v[1] - 0.5).abs() < 4.0 * ts.stderr(2).unwrap());
        let mut buf = Vec::new();
        ts.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,tail,stderr\n1,"));
    }

    #[test]
    fn too_few_paths_rejected() {
        let d = TailDistribution::exponential(1.0).unwrap().centered();
        assert!(tail_sequence(&StoppingRule::FirstAscent, &d, 10, 100, 0).is_err());
    }

    #[test]
    fn json_descriptors() {
        let r: StoppingRule = serde_json::from_str(
            r#"{"kind":"with_infinity_mass","p":0.5,"inner":{"kind":"tau_a","a":1.0}}"#,
        )
        .unwrap();
        assert!(matches!(r, StoppingRule::WithInfinityMass { .. }));
        let s = serde_json::to_string(&StoppingRule::ConstantN { n: 2 }).unwrap();
        assert_eq!(s, r#"{"kind":"constant_n","n":2}"#);
    }
}
