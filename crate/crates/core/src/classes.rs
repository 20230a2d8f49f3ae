//! Numerical diagnostics for the long-tailed (L), subexponential (S) and
//! strong subexponential (S*) classes.
//!
//! Class membership is a limit statement, so verdicts are heuristic: the
//! ratio at the top of the grid is compared with the limit, and a ratio
//! that stays away from the limit without improving over the second half
//! of the grid is reported as failing.

use serde::{Deserialize, Serialize};

use crate::dist::TailDistribution;
use crate::error::{Error, Result};
use crate::quadrature::{integrate_pieces, QuadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailClass {
    #[serde(rename = "L")]
    LongTailed,
    #[serde(rename = "S")]
    Subexponential,
    #[serde(rename = "Sstar")]
    StrongSubexponential,
}

impl TailClass {
    /// Limit the class ratio must approach.
    pub fn limit(self) -> f64 {
        match self {
            TailClass::LongTailed => 1.0,
            TailClass::Subexponential => 2.0,
            TailClass::StrongSubexponential => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TailClass::LongTailed => "L",
            TailClass::Subexponential => "S",
            TailClass::StrongSubexponential => "Sstar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Passes,
    Fails,
    Inconclusive,
}

/// Tolerance and trend settings for a class check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    /// Allowed distance of the final ratio from the limit.
    pub tolerance: f64,
    /// Relative improvement of the distance (mid-grid to grid top) below
    /// which the ratio counts as non-improving.
    pub min_improvement: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.05,
            min_improvement: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: TailClass,
    pub ratio_samples: Vec<(f64, f64)>,
    pub verdict: Verdict,
    pub tolerance: f64,
    pub limit: f64,
}

impl ClassReport {
    pub fn final_ratio(&self) -> f64 {
        self.ratio_samples.last().map(|s| s.1).unwrap_or(f64::NAN)
    }
}

fn verdict(samples: &[(f64, f64)], limit: f64, cfg: &CheckConfig) -> Verdict {
    let dist: Vec<f64> = samples.iter().map(|(_, r)| (r - limit).abs()).collect();
    let last = *dist.last().expect("nonempty grid");
    if last <= cfg.tolerance {
        return Verdict::Passes;
    }
    if dist.len() < 2 {
        return Verdict::Inconclusive;
    }
    let mid = dist[(dist.len() - 1) / 2];
    if last >= (1.0 - cfg.min_improvement) * mid {
        Verdict::Fails
    } else {
        Verdict::Inconclusive
    }
}

fn check_grid(x_grid: &[f64]) -> Result<()> {
    if x_grid.is_empty() {
        return Err(Error::invalid("x grid must be nonempty"));
    }
    if x_grid.iter().any(|&x| !(x > 0.0 && x.is_finite())) || x_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("x grid must be positive and strictly increasing"));
    }
    Ok(())
}

/// Ratios `F̄(x - h) / F̄(x)` on the grid.
pub fn check_long_tailed(dist: &TailDistribution, h: f64, x_grid: &[f64], cfg: &CheckConfig) -> Result<ClassReport> {
    if !(h > 0.0) {
        return Err(Error::invalid("h must be positive"));
    }
    check_grid(x_grid)?;
    let samples = x_grid
        .iter()
        .map(|&x| {
            let t = dist.tail(x);
            if t <= 0.0 {
                Err(Error::ZeroTail { x })
            } else {
                Ok((x, dist.tail(x - h) / t))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let class = TailClass::LongTailed;
    Ok(ClassReport {
        class,
        verdict: verdict(&samples, class.limit(), cfg),
        ratio_samples: samples,
        tolerance: cfg.tolerance,
        limit: class.limit(),
    })
}

fn quad_opts() -> QuadOptions {
    QuadOptions::new(1e-300, 1e-11)
}

/// Breakpoints `lo < … < hi` including any lower support endpoint inside.
fn pieces(lo: f64, hi: f64, extra: &[f64]) -> Vec<f64> {
    let mut pts = vec![lo, hi];
    pts.extend(extra.iter().copied().filter(|&p| p > lo && p < hi));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Tail of the two-fold convolution of the positive part `G⁺` at `x`.
///
/// Uses `P(X₁⁺ + X₂⁺ > x) = 2 P(X₁⁺ ≤ x/2, X₁⁺ + X₂⁺ > x) + F̄(x/2)²`, an
/// exact identity, with the first term a Stieltjes integral against `G⁺`:
/// atoms for lattice laws, the density plus the atom at zero otherwise.
pub fn convolution_tail(dist: &TailDistribution, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Ok(1.0);
    }
    let tail_pos = |t: f64| if t < 0.0 { 1.0 } else { dist.tail(t) };
    let half = 0.5 * x;
    let mut lower_part = 0.0;
    if let Some(atoms) = dist.atoms() {
        // atoms of X⁺: negative mass collapses onto 0
        let mass_at_zero: f64 = atoms.iter().filter(|(a, _)| *a <= 0.0).map(|(_, p)| p).sum();
        lower_part += mass_at_zero * tail_pos(x);
        for &(a, p) in atoms.iter().filter(|(a, _)| *a > 0.0 && *a <= half) {
            lower_part += p * tail_pos(x - a);
        }
    } else {
        let mass_at_zero = 1.0 - dist.tail(0.0);
        lower_part += mass_at_zero * tail_pos(x);
        if half > 0.0 {
            let pts = pieces(0.0, half, &[dist.lower_endpoint()]);
            let q = integrate_pieces(|y| dist.pdf(y).unwrap() * tail_pos(x - y), &pts, quad_opts())?;
            lower_part += q.value;
        }
    }
    let t_half = tail_pos(half);
    Ok(2.0 * lower_part + t_half * t_half)
}

/// Ratios `P(X₁⁺ + X₂⁺ > x) / F̄(x)` on the grid; the S limit is 2.
pub fn check_subexponential(dist: &TailDistribution, x_grid: &[f64], cfg: &CheckConfig) -> Result<ClassReport> {
    check_grid(x_grid)?;
    let samples = x_grid
        .iter()
        .map(|&x| {
            let t = dist.tail(x);
            if t <= 0.0 {
                return Err(Error::ZeroTail { x });
            }
            Ok((x, convolution_tail(dist, x)? / t))
        })
        .collect::<Result<Vec<_>>>()?;
    let class = TailClass::Subexponential;
    Ok(ClassReport {
        class,
        verdict: verdict(&samples, class.limit(), cfg),
        ratio_samples: samples,
        tolerance: cfg.tolerance,
        limit: class.limit(),
    })
}

/// `∫_0^x F̄(x - y) F̄(y) dy`, split at the symmetry point `x/2`.
pub fn sstar_numerator(dist: &TailDistribution, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    let half = 0.5 * x;
    let f = |y: f64| dist.tail(x - y) * dist.tail(y);
    if let Some(atoms) = dist.atoms() {
        // piecewise constant: exact midpoint sums between jump points
        let mut jumps: Vec<f64> = atoms.iter().flat_map(|&(a, _)| [a, x - a]).collect();
        jumps.push(half);
        let pts = pieces(0.0, half, &jumps);
        let sum: f64 = pts.windows(2).map(|w| (w[1] - w[0]) * f(0.5 * (w[0] + w[1]))).sum();
        return Ok(2.0 * sum);
    }
    let le = dist.lower_endpoint();
    let pts = pieces(0.0, half, &[le, x - le]);
    Ok(2.0 * integrate_pieces(f, &pts, quad_opts())?.value)
}

/// Ratios `∫_0^x F̄(x-y)F̄(y)dy / (2 m F̄(x))` with `m = ∫_0^∞ F̄`.
pub fn check_sstar(dist: &TailDistribution, x_grid: &[f64], cfg: &CheckConfig) -> Result<ClassReport> {
    check_grid(x_grid)?;
    let m = match dist.positive_mean() {
        Ok(m) if m.is_finite() => m,
        _ => return Err(Error::InfinitePositiveMean),
    };
    let samples = x_grid
        .iter()
        .map(|&x| {
            let t = dist.tail(x);
            if t <= 0.0 {
                return Err(Error::ZeroTail { x });
            }
            Ok((x, sstar_numerator(dist, x)? / (2.0 * m * t)))
        })
        .collect::<Result<Vec<_>>>()?;
    let class = TailClass::StrongSubexponential;
    Ok(ClassReport {
        class,
        verdict: verdict(&samples, class.limit(), cfg),
        ratio_samples: samples,
        tolerance: cfg.tolerance,
        limit: class.limit(),
    })
}

/// Log-spaced grid from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| {
            if i == points - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}
