//! `H(x) = Σ_{n≥1} P(σ ≥ n) F̄(x + g(n))`, its integral form, and the
//! leading-order asymptotic forms.
//!
//! Truncated sums carry a certified remainder. For analytic tails with
//! unbounded support the remainder `Σ_{n>N} a_n`, `a_n = P(σ ≥ n)F̄(x+g(n))`,
//! is enclosed between `∫_N^∞ a(t+1) dt` and `∫_N^∞ a(t) dt`, where `a(t)`
//! is the monotone continuation; the lower end is added to the value and
//! the width is the truncation bound.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::boundary::Boundary;
use crate::dist::{Family, TailDistribution};
use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_pieces, QuadOptions};
use crate::rules::{AnalyticTail, Decay, TailSequence, TailSource};

/// A value of `H` or `Ĥ` with its certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HEvaluation {
    pub value: f64,
    /// The exact total lies in `[value, value + truncation_bound]`.
    pub truncation_bound: f64,
    pub n_trunc: u64,
    pub propagated_stderr: Option<f64>,
    pub warning: Option<String>,
}

impl HEvaluation {
    pub fn upper(&self) -> f64 {
        self.value + self.truncation_bound
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HOptions {
    pub rel_tol: f64,
    /// Largest truncation index tried by the doubling search.
    pub max_terms: u64,
    /// Finite supports longer than this are treated as unbounded.
    pub max_direct: u64,
}

impl Default for HOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_terms: 1 << 24,
            max_direct: 1 << 24,
        }
    }
}

impl HOptions {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }
}

const START_TERMS: u64 = 32;

fn quad_opts(scale: f64) -> QuadOptions {
    QuadOptions {
        abs_tol: (scale * 1e-14).max(1e-300),
        rel_tol: 1e-11,
        max_intervals: 4000,
    }
}

/// `Σ_{n > from} F̄(x + g(n))`, bounded above; infinite when it may diverge.
fn crude_tail_bound(b: &Boundary, dist: &TailDistribution, x: f64, from: u64) -> Result<f64> {
    if let Some(k) = b.first_infinite() {
        let stop = k.saturating_sub(1);
        return Ok(((from + 1)..=stop).map(|n| dist.tail(x + b.eval(n))).sum());
    }
    let (n0, slope) = b.linear_tail().expect("finite boundary has a linear tail");
    let start = from.max(n0);
    let head: f64 = ((from + 1)..=start).map(|n| dist.tail(x + b.eval(n))).sum();
    let y = x + b.eval(start);
    if dist.tail(y) == 0.0 {
        return Ok(head);
    }
    if slope == 0.0 {
        return Ok(f64::INFINITY);
    }
    // Σ_{n>N} F̄(y + s(n-N)) ≤ ∫_N^∞ F̄(y + s(t-N)) dt
    Ok(head + dist.tail_integral(y)? / slope)
}

/// `H_σ^g(x)`.
pub fn h_sum(tail: &TailSequence, b: &Boundary, dist: &TailDistribution, x: f64, rel_tol: f64) -> Result<HEvaluation> {
    h_sum_with(tail, b, dist, x, HOptions::with_rel_tol(rel_tol))
}

pub fn h_sum_with(
    tail: &TailSequence,
    b: &Boundary,
    dist: &TailDistribution,
    x: f64,
    opts: HOptions,
) -> Result<HEvaluation> {
    if !x.is_finite() {
        return Err(Error::invalid("x must be finite"));
    }
    let g_end = b.first_infinite().map(|k| k - 1);
    match &tail.source {
        TailSource::Empirical(e) => {
            let last = e.n_max() + 1;
            let end = g_end.map_or(last, |k| k.min(last));
            let w: Vec<f64> = (1..=end).map(|n| dist.tail(x + b.eval(n))).collect();
            let value: f64 = w.iter().enumerate().map(|(i, wi)| tail.at(i as u64 + 1) * wi).sum();
            let stderr = empirical_stderr(e, &w);
            let p_last = tail.at(last);
            let (bound, warning) = if end < last || p_last == 0.0 {
                (0.0, None)
            } else {
                let rest = crude_tail_bound(b, dist, x, end)?;
                if rest.is_infinite() {
                    return Err(Error::Divergent(format!(
                        "{p_last:e} of the mass of σ lies past the simulated horizon and g does not grow"
                    )));
                }
                (p_last * rest, Some("empirical tail truncated at the simulated horizon".to_string()))
            };
            Ok(HEvaluation {
                value,
                truncation_bound: bound,
                n_trunc: end,
                propagated_stderr: Some(stderr),
                warning,
            })
        }
        TailSource::Analytic(t) => {
            let support = t.support_end();
            let end = match (support, g_end) {
                (Some(s), Some(k)) => Some(s.min(k)),
                (Some(s), None) => Some(s),
                (None, Some(k)) => Some(k),
                (None, None) => None,
            };
            if let Some(end) = end.filter(|&e| e <= opts.max_direct) {
                let value = (1..=end).map(|n| t.at(n) * dist.tail(x + b.eval(n))).sum();
                return Ok(HEvaluation {
                    value,
                    truncation_bound: 0.0,
                    n_trunc: end,
                    propagated_stderr: None,
                    warning: None,
                });
            }
            analytic_series(t, b, dist, x, opts, |n| t.at(n) * dist.tail(x + b.eval(n)))
        }
    }
}

/// Standard error of `mean(W(σ_i))`, `W(k) = Σ_{n≤k} w_n`, from the histogram.
fn empirical_stderr(e: &crate::rules::EmpiricalTail, w: &[f64]) -> f64 {
    let m = e.n_paths as f64;
    let mut cum = 0.0;
    let (mut s1, mut s2) = (0.0, 0.0);
    for (k, &c) in e.counts.iter().enumerate() {
        if k >= 1 {
            cum += w.get(k - 1).copied().unwrap_or(0.0);
        }
        s1 += c as f64 * cum;
        s2 += c as f64 * cum * cum;
    }
    let beyond_w = cum + w.get(e.counts.len() - 1).copied().unwrap_or(0.0);
    s1 += e.beyond as f64 * beyond_w;
    s2 += e.beyond as f64 * beyond_w * beyond_w;
    let mean = s1 / m;
    let var = (s2 / m - mean * mean).max(0.0);
    (1.0 - e.mass) * (var / m).sqrt()
}

/// Doubling search over the truncation index with the integral enclosure.
///
/// `term(n)` is the `n`-th summand.
fn analytic_series<T: Fn(u64) -> f64>(
    t: &AnalyticTail,
    b: &Boundary,
    dist: &TailDistribution,
    x: f64,
    opts: HOptions,
    term: T,
) -> Result<HEvaluation> {
    let (n0, slope) = b
        .linear_tail()
        .ok_or_else(|| Error::Divergent("boundary has no linear continuation".into()))?;
    let divergent = slope == 0.0
        && match t.decay() {
            Decay::Mass(_) => true,
            Decay::Power { alpha, .. } => alpha <= 1.0,
            _ => false,
        };
    let g0 = b.eval(n0);
    if divergent && dist.tail(x + g0) > 0.0 {
        return Err(Error::Divergent(
            "P(σ ≥ n) is not summable and g does not grow, so the series diverges".into(),
        ));
    }
    let g_lin = move |s: f64| g0 + slope * (s - n0 as f64);
    let a = |s: f64| {
        let p = t.continuous(s);
        if p == 0.0 {
            0.0
        } else {
            p * dist.tail(x + g_lin(s))
        }
    };
    let kink = match t {
        AnalyticTail::Power { k1, alpha } => Some(k1.powf(1.0 / alpha)),
        _ => None,
    };

    let mut n = START_TERMS.max(n0);
    let mut done = 0u64;
    let mut partial = 0.0;
    loop {
        for k in (done + 1)..=n {
            partial += term(k);
        }
        done = n;
        let nf = n as f64;
        let scale = partial.max(dist.tail(x + g_lin(nf)) * t.at(n)).max(1e-300);
        let q = quad_opts(scale);
        let pieces = |from: f64, shift: f64| -> Result<(f64, f64)> {
            let f = |s: f64| a(s + shift);
            let mut pts = vec![from];
            if let Some(k) = kink {
                if k - shift > from {
                    pts.push(k - shift);
                }
            }
            let mut total = integrate_pieces(&f, &pts, q)?;
            let last = *pts.last().unwrap();
            let tailq = integrate(&f, last, f64::INFINITY, q)?;
            total.value += tailq.value;
            total.error += tailq.error;
            Ok((total.value, total.error))
        };
        let (lo, el) = pieces(nf, 1.0)?;
        let (hi, eh) = pieces(nf, 0.0)?;
        let err = el + eh;
        let value = partial + lo;
        let bound = (hi - lo).max(0.0) + err;
        if bound <= opts.rel_tol * value || value == 0.0 && bound == 0.0 {
            return Ok(HEvaluation {
                value,
                truncation_bound: bound,
                n_trunc: n,
                propagated_stderr: None,
                warning: None,
            });
        }
        if n >= opts.max_terms {
            return Ok(HEvaluation {
                value,
                truncation_bound: bound,
                n_trunc: n,
                propagated_stderr: None,
                warning: Some(format!(
                    "relative tolerance {:e} not reached by {} terms; bound {:e}",
                    opts.rel_tol, n, bound
                )),
            });
        }
        n = (n * 2).min(opts.max_terms);
    }
}

/// `∫_a^b F̄` for `a ≤ b`, without cancellation for lattice laws.
fn tail_integral_between(dist: &TailDistribution, a: f64, b: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    if let Some(atoms) = dist.atoms() {
        return Ok(atoms.iter().map(|&(s, p)| p * (s - a).clamp(0.0, b - a)).sum());
    }
    let closed_ok = !matches!(dist.family(), Family::Lognormal { .. });
    let ia = dist.tail_integral(a)?;
    if closed_ok && b.is_finite() {
        let ib = dist.tail_integral(b)?;
        if ia - ib > 1e-6 * ia {
            return Ok(ia - ib);
        }
    }
    if b.is_infinite() {
        return Ok(ia);
    }
    let scale = (dist.tail(a) * (b - a)).max(1e-300);
    Ok(integrate(|y| dist.tail(y), a, b, quad_opts(scale))?.value)
}

/// `Ĥ(x) = ∫_0^∞ P(σ > t) F̄(x + g(t)) dt` with `g` interpolated linearly
/// and `P(σ > t) = P(σ ≥ ⌊t⌋ + 1)`.
pub fn h_integral(tail: &TailSequence, b: &Boundary, dist: &TailDistribution, x: f64) -> Result<HEvaluation> {
    h_integral_with(tail, b, dist, x, HOptions::with_rel_tol(1e-9))
}

pub fn h_integral_with(
    tail: &TailSequence,
    b: &Boundary,
    dist: &TailDistribution,
    x: f64,
    opts: HOptions,
) -> Result<HEvaluation> {
    let real = b.extend_to_real()?;
    let cell = |n: u64| -> Result<f64> {
        let lo = real.eval((n - 1) as f64);
        let hi = real.eval(n as f64);
        if lo.is_infinite() {
            return Ok(0.0);
        }
        if hi.is_infinite() {
            // g jumps to ∞ right after n - 1
            return Ok(0.0);
        }
        if hi == lo {
            return Ok(dist.tail(x + hi));
        }
        Ok(tail_integral_between(dist, x + lo, x + hi)? / (hi - lo))
    };
    let g_end = b.first_infinite().map(|k| k - 1);
    match &tail.source {
        TailSource::Empirical(e) => {
            let last = e.n_max() + 1;
            let end = g_end.map_or(last, |k| k.min(last));
            let mut value = 0.0;
            for n in 1..=end {
                value += tail.at(n) * cell(n)?;
            }
            let p_last = tail.at(last);
            let bound = if end < last || p_last == 0.0 {
                0.0
            } else {
                // cells past the horizon lie below F̄(x + g(n-1))
                let rest = dist.tail(x + b.eval(end)) + crude_tail_bound(b, dist, x, end)?;
                if rest.is_infinite() {
                    return Err(Error::Divergent("empirical tail truncated and g does not grow".into()));
                }
                p_last * rest
            };
            Ok(HEvaluation {
                value,
                truncation_bound: bound,
                n_trunc: end,
                propagated_stderr: None,
                warning: None,
            })
        }
        TailSource::Analytic(t) => {
            let end = match (t.support_end(), g_end) {
                (Some(s), Some(k)) => Some(s.min(k)),
                (Some(s), None) => Some(s),
                (None, Some(k)) => Some(k),
                (None, None) => None,
            };
            if let Some(end) = end.filter(|&e| e <= opts.max_direct) {
                let mut value = 0.0;
                for n in 1..=end {
                    value += t.at(n) * cell(n)?;
                }
                return Ok(HEvaluation {
                    value,
                    truncation_bound: 0.0,
                    n_trunc: end,
                    propagated_stderr: None,
                    warning: None,
                });
            }
            integral_series(t, b, dist, x, opts, &cell)
        }
    }
}

fn integral_series<C: Fn(u64) -> Result<f64>>(
    t: &AnalyticTail,
    b: &Boundary,
    dist: &TailDistribution,
    x: f64,
    opts: HOptions,
    cell: &C,
) -> Result<HEvaluation> {
    let (n0, slope) = b
        .linear_tail()
        .ok_or_else(|| Error::Divergent("boundary has no linear continuation".into()))?;
    let divergent = slope == 0.0
        && match t.decay() {
            Decay::Mass(_) => true,
            Decay::Power { alpha, .. } => alpha <= 1.0,
            _ => false,
        };
    let g0 = b.eval(n0);
    if divergent && dist.tail(x + g0) > 0.0 {
        return Err(Error::Divergent(
            "P(σ ≥ n) is not summable and g does not grow, so the integral diverges".into(),
        ));
    }
    let g_lin = move |s: f64| g0 + slope * (s - n0 as f64);
    let kink = match t {
        AnalyticTail::Power { k1, alpha } => Some(k1.powf(1.0 / alpha)),
        _ => None,
    };
    let mut n = START_TERMS.max(n0);
    let mut done = 0;
    let mut partial = 0.0;
    loop {
        for k in (done + 1)..=n {
            partial += t.at(k) * cell(k)?;
        }
        done = n;
        let nf = n as f64;
        let scale = partial.max(t.at(n) * dist.tail(x + g_lin(nf))).max(1e-300);
        let q = quad_opts(scale);
        // P_c(s+1) ≤ P(σ > s) ≤ P_c(s) for s ≥ N
        let piece = |shift: f64| -> Result<(f64, f64)> {
            let f = |s: f64| {
                let p = t.continuous(s + shift);
                if p == 0.0 {
                    0.0
                } else {
                    p * dist.tail(x + g_lin(s))
                }
            };
            let mut pts = vec![nf];
            if let Some(k) = kink {
                if k - shift > nf {
                    pts.push(k - shift);
                }
            }
            let mut total = integrate_pieces(&f, &pts, q)?;
            let tq = integrate(&f, *pts.last().unwrap(), f64::INFINITY, q)?;
            total.value += tq.value;
            total.error += tq.error;
            Ok((total.value, total.error))
        };
        let (lo, el) = piece(1.0)?;
        let (hi, eh) = piece(0.0)?;
        let value = partial + lo;
        let bound = (hi - lo).max(0.0) + el + eh;
        if bound <= opts.rel_tol * value || value == 0.0 && bound == 0.0 || n >= opts.max_terms {
            let warning = (bound > opts.rel_tol * value)
                .then(|| format!("relative tolerance {:e} not reached by {} cells", opts.rel_tol, n));
            return Ok(HEvaluation {
                value,
                truncation_bound: bound,
                n_trunc: n,
                propagated_stderr: None,
                warning,
            });
        }
        n = (n * 2).min(opts.max_terms);
    }
}

/// Which side of the chain failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChainSide {
    /// `H^{g^b}(x) ≥ H^{g^c}(x)`.
    Monotone,
    /// `H^{g^c}(x) ≥ (b/c)·H^{g^b}(x + c)`.
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainViolation {
    pub x: f64,
    pub b: f64,
    pub c: f64,
    pub side: ChainSide,
    pub lhs_upper: f64,
    pub rhs_lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub checked: usize,
    pub first_violation: Option<ChainViolation>,
}

impl ChainReport {
    pub fn holds(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Checks `H^{g^b}(x) ≥ H^{g^c}(x) ≥ (b/c)·H^{g^b}(x + c)` with
/// `g^a(n) = g(n) + a·n`; a side fails only when it fails beyond the
/// certified truncation bounds.
pub fn lemma2_check(
    tail: &TailSequence,
    g: &Boundary,
    dist: &TailDistribution,
    pairs: &[(f64, f64)],
    x_grid: &[f64],
    rel_tol: f64,
) -> Result<ChainReport> {
    if !g.verify_class(0.0).holds || g.eval(1) < 0.0 {
        return Err(Error::invalid("boundary must lie in G_0"));
    }
    let mut checked = 0;
    for &(b, c) in pairs {
        if !(b > 0.0 && b < c) {
            return Err(Error::invalid(format!("need 0 < b < c, got b = {b}, c = {c}")));
        }
        let gb = g.plus_linear(b)?;
        let gc = g.plus_linear(c)?;
        for &x in x_grid {
            let hb = h_sum(tail, &gb, dist, x, rel_tol)?;
            let hc = h_sum(tail, &gc, dist, x, rel_tol)?;
            let hb_shift = h_sum(tail, &gb, dist, x + c, rel_tol)?;
            checked += 1;
            let fuzz = 1.0 + 1e-12;
            if hb.upper() * fuzz < hc.value {
                return Ok(ChainReport {
                    checked,
                    first_violation: Some(ChainViolation {
                        x,
                        b,
                        c,
                        side: ChainSide::Monotone,
                        lhs_upper: hb.upper(),
                        rhs_lower: hc.value,
                    }),
                });
            }
            let rhs = b / c * hb_shift.value;
            if hc.upper() * fuzz < rhs {
                return Ok(ChainReport {
                    checked,
                    first_violation: Some(ChainViolation {
                        x,
                        b,
                        c,
                        side: ChainSide::Scaled,
                        lhs_upper: hc.upper(),
                        rhs_lower: rhs,
                    }),
                });
            }
        }
    }
    Ok(ChainReport {
        checked,
        first_violation: None,
    })
}

/// Result of the chain `H ≤ Ĥ ≤ v^g·H` at one `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sandwich {
    pub x: f64,
    pub h: HEvaluation,
    pub h_hat: HEvaluation,
    pub v_g: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
}

pub fn sandwich(tail: &TailSequence, b: &Boundary, dist: &TailDistribution, x: f64, rel_tol: f64) -> Result<Sandwich> {
    let h = h_sum(tail, b, dist, x, rel_tol)?;
    let h_hat = h_integral_with(tail, b, dist, x, HOptions::with_rel_tol(rel_tol))?;
    let v_g = b.v_g(dist, x, 1_000_000)?;
    let fuzz = 1.0 + 1e-10;
    let lower_holds = h_hat.upper() * fuzz >= h.value;
    let upper_holds = v_g.is_infinite() || v_g * h.upper() * fuzz >= h_hat.value;
    Ok(Sandwich {
        x,
        h,
        h_hat,
        v_g,
        lower_holds,
        upper_holds,
    })
}

/// Leading-order forms of `P(M_σ^g > x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AsymptoticForm {
    /// `Eσ·F̄(x)`.
    FiniteMean { mean_sigma: f64 },
    /// `C·x^(1-α-β)` for `P(σ ≥ n) ~ K₁n^(-α)`, `F̄(x) ~ K₂x^(-β)`, `g(n) = cn`.
    PowerPower { k1: f64, k2: f64, alpha: f64, beta: f64, c: f64 },
    /// `K₂·x^((1-α)(1-β))·exp(-x^β)`.
    WeibullPower { alpha: f64, beta: f64, c: f64, k2: f64 },
    /// `(p/c)·F̄^s(x)`.
    Veraverbeke { p: f64, c: f64 },
}

fn in_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")))
    }
}

fn pos(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and positive, got {v}")))
    }
}

/// `∫_0^∞ u^(-α)(1+u)^(-β) du` by quadrature, after `u = v^(1/(1-α))`
/// removes the singularity at zero.
pub fn power_power_integral(alpha: f64, beta: f64) -> Result<f64> {
    in_open_unit("alpha", alpha)?;
    if !(beta > 1.0) {
        return Err(Error::invalid(format!("beta must exceed 1, got {beta}")));
    }
    let e = 1.0 / (1.0 - alpha);
    let f = |v: f64| e * (1.0 + v.powf(e)).powf(-beta);
    let q = integrate_pieces(f, &[0.0, 1.0], QuadOptions::new(1e-15, 1e-13))?;
    let t = integrate(f, 1.0, f64::INFINITY, QuadOptions::new(1e-15, 1e-13))?;
    Ok(q.value + t.value)
}

/// `K₁Γ(1-α)(βc)^(α-1)`: the constant of the Weibull variant for
/// `F̄(x) = exp(-x^β)`, from `Σ_n K₁n^(-α)exp(-(x+cn)^β)` with the
/// exponent linearized around `x`.
pub fn weibull_power_k2(k1: f64, alpha: f64, beta: f64, c: f64) -> Result<f64> {
    pos("k1", k1)?;
    in_open_unit("alpha", alpha)?;
    in_open_unit("beta", beta)?;
    pos("c", c)?;
    Ok(k1 * gamma(1.0 - alpha) * (beta * c).powf(alpha - 1.0))
}

impl AsymptoticForm {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AsymptoticForm::FiniteMean { mean_sigma } => {
                if mean_sigma.is_finite() && mean_sigma >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("Eσ must be finite and nonnegative"))
                }
            }
            AsymptoticForm::PowerPower { k1, k2, alpha, beta, c } => {
                pos("k1", k1)?;
                pos("k2", k2)?;
                in_open_unit("alpha", alpha)?;
                if !(beta > 1.0) {
                    return Err(Error::invalid(format!("beta must exceed 1, got {beta}")));
                }
                pos("c", c)
            }
            AsymptoticForm::WeibullPower { alpha, beta, c, k2 } => {
                in_open_unit("alpha", alpha)?;
                in_open_unit("beta", beta)?;
                pos("c", c)?;
                pos("k2", k2)
            }
            AsymptoticForm::Veraverbeke { p, c } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::invalid(format!("p must lie in (0, 1], got {p}")));
                }
                pos("c", c)
            }
        }
    }

    /// `C = K₁K₂c^(α-1)·∫_0^∞ u^(-α)(1+u)^(-β) du` for the power form.
    pub fn constant(&self) -> Result<Option<f64>> {
        self.validate()?;
        match *self {
            AsymptoticForm::PowerPower { k1, k2, alpha, beta, c } => {
                Ok(Some(k1 * k2 * c.powf(alpha - 1.0) * power_power_integral(alpha, beta)?))
            }
            _ => Ok(None),
        }
    }

    /// Leading-order value at `x`; `dist` supplies `F̄` where needed.
    pub fn eval(&self, dist: &TailDistribution, x: f64) -> Result<f64> {
        self.validate()?;
        match *self {
            AsymptoticForm::FiniteMean { mean_sigma } => Ok(mean_sigma * dist.tail(x)),
            AsymptoticForm::PowerPower { alpha, beta, .. } => {
                Ok(self.constant()?.unwrap() * x.powf(1.0 - alpha - beta))
            }
            AsymptoticForm::WeibullPower { alpha, beta, k2, .. } => {
                Ok(k2 * x.powf((1.0 - alpha) * (1.0 - beta)) * (-x.powf(beta)).exp())
            }
            AsymptoticForm::Veraverbeke { p, c } => Ok(p / c * dist.integrated_tail(x.max(0.0))?),
        }
    }
}

/// One row of an `H` table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HRow {
    pub x: f64,
    pub h: f64,
    pub truncation_bound: f64,
    pub h_hat: Option<f64>,
    pub v_g: Option<f64>,
    pub asymptotic: Option<f64>,
    pub ratio: Option<f64>,
}

/// `H` on a grid, with `Ĥ`, `v^g` and an asymptotic comparison where
/// they are defined.
pub fn h_table(
    tail: &TailSequence,
    b: &Boundary,
    dist: &TailDistribution,
    x_grid: &[f64],
    form: Option<&AsymptoticForm>,
    rel_tol: f64,
) -> Result<Vec<HRow>> {
    let monotone = b.extend_to_real().is_ok();
    x_grid
        .iter()
        .map(|&x| {
            let h = h_sum(tail, b, dist, x, rel_tol)?;
            let h_hat = if monotone {
                h_integral_with(tail, b, dist, x, HOptions::with_rel_tol(rel_tol)).ok().map(|e| e.value)
            } else {
                None
            };
            let v_g = b.v_g(dist, x, 100_000).ok();
            let asymptotic = match form {
                Some(f) => Some(f.eval(dist, x)?),
                None => None,
            };
            let ratio = asymptotic.filter(|&a| a > 0.0).map(|a| h.value / a);
            Ok(HRow {
                x,
                h: h.value,
                truncation_bound: h.truncation_bound,
                h_hat,
                v_g,
                asymptotic,
                ratio,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::TailRule;
    use crate::rules::{mean_sigma, StoppingRule};

    fn pareto2() -> TailDistribution {
        TailDistribution::pareto(2.0, 1.0).unwrap()
    }

    fn constant(n: u64) -> TailSequence {
        TailSequence::analytic(AnalyticTail::Constant { n }, n)
    }

    #[test]
    fn two_term_sum() {
        let h = h_sum(&constant(2), &Boundary::linear(1.0).unwrap(), &pareto2(), 0.0, 1e-10).unwrap();
        assert!((h.value - 13.0 / 36.0).abs() < 1e-15);
        assert_eq!(h.truncation_bound, 0.0);
    }

    #[test]
    fn single_term_is_the_tail() {
        let d = TailDistribution::weibull(0.5, 1.0).unwrap().centered();
        for x in [0.0, 3.0, 40.0] {
            let h = h_sum(&constant(1), &Boundary::zero(), &d, x, 1e-10).unwrap();
            assert_eq!(h.value, d.tail(x));
        }
    }

    #[test]
    fn power_tail_certificate_brackets_direct_sum() {
        // α = 1/2, β = 2, c = 1: compare with a long direct sum plus its own integral tail
        let t = TailSequence::analytic(AnalyticTail::Power { k1: 1.0, alpha: 0.5 }, 1);
        let d = pareto2();
        let b = Boundary::linear(1.0).unwrap();
        let x = 10.0;
        let h = h_sum(&t, &b, &d, x, 1e-10).unwrap();
        let n = 4_000_000u64;
        let direct: f64 = (1..=n).map(|k| (k as f64).powf(-0.5) * (1.0 + x + k as f64).powi(-2)).sum();
        let rest_hi: f64 = (n as f64).powf(-0.5) / (1.0 + x + n as f64);
        assert!(h.value >= direct - 1e-15);
        assert!(h.upper() <= direct + rest_hi + 1e-15);
        assert!(h.truncation_bound <= 1e-10 * h.value);
    }

    #[test]
    fn empty_infinite_boundary() {
        let b = Boundary::tabulated(vec![f64::INFINITY], TailRule::InfiniteFrom).unwrap();
        let t = TailSequence::analytic(AnalyticTail::Power { k1: 1.0, alpha: 0.5 }, 1);
        let h = h_sum(&t, &b, &pareto2(), 1.0, 1e-8).unwrap();
        assert_eq!(h.value, 0.0);
    }

    #[test]
    fn divergent_series_is_reported() {
        let t = TailSequence::analytic(AnalyticTail::Power { k1: 1.0, alpha: 0.5 }, 1);
        let err = h_sum(&t, &Boundary::zero(), &pareto2(), 1.0, 1e-8).unwrap_err();
        assert!(matches!(err, Error::Divergent(_)));
        let m = TailSequence::analytic(
            AnalyticTail::InfinityMass {
                p: 0.5,
                inner: Box::new(AnalyticTail::Constant { n: 1 }),
            },
            1,
        );
        assert!(matches!(h_sum(&m, &Boundary::zero(), &pareto2(), 1.0, 1e-8), Err(Error::Divergent(_))));
    }

    #[test]
    fn veraverbeke_limit_of_the_sum() {
        // σ = ∞: H(x) = Σ F̄(x + cn); Pareto β=2 with c = 1 gives ≈ F̄^s(x)
        let t = TailSequence::analytic(
            AnalyticTail::InfinityMass {
                p: 1.0,
                inner: Box::new(AnalyticTail::Constant { n: 0 }),
            },
            1,
        );
        let d = pareto2();
        let x = 1e3;
        let h = h_sum(&t, &Boundary::linear(1.0).unwrap(), &d, x, 1e-10).unwrap();
        let exact: f64 = 1.0 / (1.0 + x) - 1.0 / (1.0 + x).powi(2) / 2.0;
        assert!((h.value / exact - 1.0).abs() < 1e-3, "{} {}", h.value, exact);
    }

    #[test]
    fn integral_form_single_cell() {
        let hh = h_integral(&constant(1), &Boundary::linear(1.0).unwrap(), &pareto2(), 0.0).unwrap();
        assert!((hh.value - 0.5).abs() < 1e-14);
    }

    #[test]
    fn sandwich_on_power_tail() {
        let t = TailSequence::analytic(AnalyticTail::Power { k1: 1.0, alpha: 0.7 }, 1);
        let d = TailDistribution::pareto(2.5, 1.0).unwrap().centered();
        let b = Boundary::linear(0.5).unwrap();
        for x in [0.0, 1.0, 30.0] {
            let s = sandwich(&t, &b, &d, x, 1e-9).unwrap();
            assert!(s.lower_holds && s.upper_holds, "{s:?}");
            assert!(s.h_hat.value > s.h.value);
        }
    }

    #[test]
    fn integral_form_converges_to_n_tail() {
        let d = TailDistribution::pareto(2.5, 1.0).unwrap();
        let b = Boundary::linear(1.0).unwrap();
        let x = 1e5;
        let hh = h_integral(&constant(4), &b, &d, x).unwrap();
        let h = h_sum(&constant(4), &b, &d, x, 1e-6).unwrap();
        assert!((hh.value / h.value - 1.0).abs() < 1e-4);
        assert!((h.value / (4.0 * d.tail(x)) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn lemma2_example() {
        let r = lemma2_check(&constant(3), &Boundary::zero(), &pareto2(), &[(1.0, 2.0)], &[0.0], 1e-10).unwrap();
        assert!(r.holds());
        assert!(lemma2_check(&constant(3), &Boundary::zero(), &pareto2(), &[(1.0, 1.0)], &[0.0], 1e-10).is_err());
        let bad = Boundary::tabulated(vec![2.0, 1.0], TailRule::LinearExtend { slope: 1.0 }).unwrap();
        assert!(lemma2_check(&constant(3), &bad, &pareto2(), &[(1.0, 2.0)], &[0.0], 1e-10).is_err());
    }

    #[test]
    fn power_power_constant_is_half_pi() {
        let f = AsymptoticForm::PowerPower {
            k1: 1.0,
            k2: 1.0,
            alpha: 0.5,
            beta: 2.0,
            c: 1.0,
        };
        let c = f.constant().unwrap().unwrap();
        assert!((c - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
        let v = f.eval(&pareto2(), 100.0).unwrap();
        assert!((v - std::f64::consts::FRAC_PI_2 * 1e-3).abs() < 1e-12);
    }

    #[test]
    fn power_power_integral_matches_beta_function() {
        for (a, b) in [(0.3, 2.5), (0.5, 2.0), (0.9, 1.2), (0.1, 4.0)] {
            let q = power_power_integral(a, b).unwrap();
            let oracle = statrs::function::beta::beta(1.0 - a, a + b - 1.0);
            assert!((q / oracle - 1.0).abs() < 1e-8, "{a} {b}: {q} vs {oracle}");
        }
    }

    #[test]
    fn simple_forms() {
        let d = pareto2();
        let v = AsymptoticForm::Veraverbeke { p: 1.0, c: 2.0 }.eval(&d, 99.0).unwrap();
        assert!((v - 0.005).abs() < 1e-15);
        // F̄(x) = 1e-3 at x = √1000 - 1
        let f = AsymptoticForm::FiniteMean { mean_sigma: 5.0 };
        let xq = (1e3f64).sqrt() - 1.0;
        assert!((f.eval(&d, xq).unwrap() - 5e-3).abs() < 1e-15);
        assert!(AsymptoticForm::PowerPower {
            k1: 1.0,
            k2: 1.0,
            alpha: 1.5,
            beta: 2.0,
            c: 1.0
        }
        .validate()
        .is_err());
        assert!(AsymptoticForm::Veraverbeke { p: 0.0, c: 1.0 }.validate().is_err());
        assert!(AsymptoticForm::WeibullPower {
            alpha: 0.5,
            beta: 1.5,
            c: 1.0,
            k2: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn weibull_k2_against_direct_sum() {
        let (alpha, beta, c) = (0.2, 0.5, 1.0);
        let k2 = weibull_power_k2(1.0, alpha, beta, c).unwrap();
        let d = TailDistribution::weibull(beta, 1.0).unwrap();
        let t = TailSequence::analytic(AnalyticTail::Power { k1: 1.0, alpha }, 1);
        let b = Boundary::linear(c).unwrap();
        let form = AsymptoticForm::WeibullPower { alpha, beta, c, k2 };
        let x = 1e4;
        let h = h_sum(&t, &b, &d, x, 1e-8).unwrap();
        let ratio = h.value / form.eval(&d, x).unwrap();
        assert!((ratio - 1.0).abs() < 0.03, "{ratio}");
    }

    #[test]
    fn empirical_tail_gives_stderr() {
        let d = TailDistribution::pareto(2.5, 1.0).unwrap().centered();
        let ts = crate::rules::tail_sequence(&StoppingRule::TauA { a: 1.0 }, &d, 200, 20_000, 3).unwrap();
        let h = h_sum(&ts, &Boundary::linear(1.0).unwrap(), &d, 50.0, 1e-8).unwrap();
        assert!(h.propagated_stderr.unwrap() > 0.0);
        let m = mean_sigma(&ts).finite().unwrap();
        assert!((h.value / (m * d.tail(50.0)) - 1.0).abs() < 0.1);
    }
}
