//! Increment laws: exact tails, integrated tails, densities, samplers.
//!
//! Every law is a raw family plus a `shift`; the walk increments are
//! `X - shift` with `X` drawn from the raw family. [`TailDistribution::centered`]
//! sets the shift to the analytic mean so the increments have mean zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma, gamma_ur};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadOptions};

/// Raw (pre-shift) family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Family {
    /// `F̄(x) = (1 + x/scale)^(-beta)` for `x ≥ 0`.
    #[serde(alias = "pareto")]
    ParetoShifted { beta: f64, scale: f64 },
    /// `F̄(x) = exp(-(x/scale)^shape)` for `x ≥ 0`, `shape ∈ (0, 1)`.
    Weibull { shape: f64, scale: f64 },
    /// `ln X ~ N(mu, sigma²)`.
    Lognormal { mu: f64, sigma: f64 },
    /// Light-tailed negative control.
    Exponential { rate: f64 },
    /// Finite support on an ascending grid.
    Lattice { support: Vec<f64>, probs: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ShiftSpec {
    Value(f64),
    Keyword(String),
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec::Value(0.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawDistribution {
    #[serde(flatten)]
    family: Family,
    #[serde(default)]
    shift: ShiftSpec,
}

/// A (possibly centered) increment law.
///
/// JSON form: `{"family": "...", "params": {...}, "shift": <real>}`; the
/// shift may also be given as the string `"mean"` to center analytically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct TailDistribution {
    family: Family,
    shift: f64,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl TryFrom<RawDistribution> for TailDistribution {
    type Error = Error;

    fn try_from(raw: RawDistribution) -> Result<Self> {
        let dist = TailDistribution::new(raw.family)?;
        match raw.shift {
            ShiftSpec::Value(s) => dist.with_shift(s),
            ShiftSpec::Keyword(k) if k == "mean" => Ok(dist.centered()),
            ShiftSpec::Keyword(k) => Err(Error::Config(format!(
                "field `shift`: expected a number or \"mean\", got \"{k}\""
            ))),
        }
    }
}

impl From<TailDistribution> for RawDistribution {
    fn from(d: TailDistribution) -> Self {
        RawDistribution {
            family: d.family,
            shift: ShiftSpec::Value(d.shift),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and positive, got {v}")))
    }
}

impl TailDistribution {
    pub fn new(family: Family) -> Result<Self> {
        let mut cumulative = Vec::new();
        match &family {
            Family::ParetoShifted { beta, scale } => {
                positive("scale", *scale)?;
                if !(beta.is_finite() && *beta > 1.0) {
                    return Err(Error::invalid(format!(
                        "Pareto exponent must exceed 1 for a finite mean, got {beta}"
                    )));
                }
            }
            Family::Weibull { shape, scale } => {
                positive("scale", *scale)?;
                if !(*shape > 0.0 && *shape < 1.0) {
                    return Err(Error::invalid(format!("Weibull shape must lie in (0, 1), got {shape}")));
                }
            }
            Family::Lognormal { mu, sigma } => {
                positive("sigma", *sigma)?;
                if !mu.is_finite() {
                    return Err(Error::invalid("lognormal mu must be finite"));
                }
            }
            Family::Exponential { rate } => positive("rate", *rate)?,
            Family::Lattice { support, probs } => {
                if support.is_empty() || support.len() != probs.len() {
                    return Err(Error::invalid("lattice needs matching nonempty support and probs"));
                }
                if support.iter().any(|s| !s.is_finite()) || support.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::invalid("lattice support must be finite and strictly ascending"));
                }
                if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                    return Err(Error::invalid("lattice probabilities must be nonnegative"));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!("lattice probabilities sum to {total}, not 1")));
                }
                let mut acc = 0.0;
                cumulative = probs
                    .iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect();
                *cumulative.last_mut().unwrap() = f64::INFINITY;
            }
        }
        Ok(Self {
            family,
            shift: 0.0,
            cumulative,
        })
    }

    pub fn pareto(beta: f64, scale: f64) -> Result<Self> {
        Self::new(Family::ParetoShifted { beta, scale })
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self> {
        Self::new(Family::Weibull { shape, scale })
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(Family::Lognormal { mu, sigma })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(Family::Exponential { rate })
    }

    pub fn lattice(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        Self::new(Family::Lattice { support, probs })
    }

    pub fn with_shift(mut self, shift: f64) -> Result<Self> {
        if !shift.is_finite() {
            return Err(Error::invalid("shift must be finite"));
        }
        self.shift = shift;
        Ok(self)
    }

    /// Shifts by the analytic mean so the increments are centered.
    pub fn centered(mut self) -> Self {
        self.shift = self.raw_mean();
        self
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self.family, Family::Lattice { .. })
    }

    pub fn raw_mean(&self) -> f64 {
        match &self.family {
            Family::ParetoShifted { beta, scale } => scale / (beta - 1.0),
            Family::Weibull { shape, scale } => scale * gamma(1.0 + 1.0 / shape),
            Family::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Family::Exponential { rate } => 1.0 / rate,
            Family::Lattice { support, probs } => support.iter().zip(probs).map(|(s, p)| s * p).sum(),
        }
    }

    /// Mean of the shifted increments.
    pub fn mean(&self) -> f64 {
        match &self.family {
            Family::Lattice { support, probs } => {
                support.iter().zip(probs).map(|(s, p)| (s - self.shift) * p).sum()
            }
            _ => self.raw_mean() - self.shift,
        }
    }

    /// Variance (may be infinite for Pareto with `beta ≤ 2`).
    pub fn variance(&self) -> f64 {
        match &self.family {
            Family::ParetoShifted { beta, scale } => {
                if *beta <= 2.0 {
                    f64::INFINITY
                } else {
                    scale * scale * beta / ((beta - 1.0).powi(2) * (beta - 2.0))
                }
            }
            Family::Weibull { shape, scale } => {
                let g1 = gamma(1.0 + 1.0 / shape);
                scale * scale * (gamma(1.0 + 2.0 / shape) - g1 * g1)
            }
            Family::Lognormal { mu, sigma } => {
                let s2 = sigma * sigma;
                (s2.exp() - 1.0) * (2.0 * mu + s2).exp()
            }
            Family::Exponential { rate } => 1.0 / (rate * rate),
            Family::Lattice { support, probs } => {
                let m = self.raw_mean();
                support.iter().zip(probs).map(|(s, p)| (s - m).powi(2) * p).sum()
            }
        }
    }

    /// Left end of the support of the shifted law.
    pub fn lower_endpoint(&self) -> f64 {
        let raw = match &self.family {
            Family::Lattice { support, .. } => support[0],
            _ => 0.0,
        };
        raw - self.shift
    }

    fn raw_tail(&self, y: f64) -> f64 {
        if y.is_nan() {
            return f64::NAN;
        }
        if y == f64::INFINITY {
            return 0.0;
        }
        match &self.family {
            Family::Lattice { support, probs } => {
                let idx = support.partition_point(|&s| s <= y);
                probs[idx..].iter().sum::<f64>().clamp(0.0, 1.0)
            }
            _ if y <= 0.0 => 1.0,
            Family::ParetoShifted { beta, scale } => (1.0 + y / scale).powf(-beta),
            Family::Weibull { shape, scale } => (-(y / scale).powf(*shape)).exp(),
            Family::Lognormal { mu, sigma } => {
                0.5 * erfc((y.ln() - mu) / (sigma * std::f64::consts::SQRT_2))
            }
            Family::Exponential { rate } => (-rate * y).exp(),
        }
    }

    /// `F̄(x) = P(ξ > x)`.
    pub fn tail(&self, x: f64) -> f64 {
        self.raw_tail(x + self.shift)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.tail(x)
    }

    /// Density of the shifted law; `None` for lattice laws.
    pub fn pdf(&self, x: f64) -> Option<f64> {
        let y = x + self.shift;
        let v = match &self.family {
            Family::Lattice { .. } => return None,
            _ if y < 0.0 => 0.0,
            Family::ParetoShifted { beta, scale } => beta / scale * (1.0 + y / scale).powf(-beta - 1.0),
            Family::Weibull { shape, scale } => {
                if y == 0.0 {
                    f64::INFINITY
                } else {
                    let z = (y / scale).powf(*shape);
                    shape / y * z * (-z).exp()
                }
            }
            Family::Lognormal { mu, sigma } => {
                if y == 0.0 {
                    0.0
                } else {
                    let z = (y.ln() - mu) / sigma;
                    (-0.5 * z * z).exp() / (y * sigma * (2.0 * std::f64::consts::PI).sqrt())
                }
            }
            Family::Exponential { rate } => rate * (-rate * y).exp(),
        };
        Some(v)
    }

    /// Atoms `(value, probability)` of a lattice law in shifted coordinates.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match &self.family {
            Family::Lattice { support, probs } => Some(
                support
                    .iter()
                    .zip(probs)
                    .map(|(s, p)| (s - self.shift, *p))
                    .collect(),
            ),
            _ => None,
        }
    }

    fn raw_tail_integral(&self, y: f64) -> Result<f64> {
        if y == f64::INFINITY {
            return Ok(0.0);
        }
        if let Family::Lattice { support, probs } = &self.family {
            return Ok(support
                .iter()
                .zip(probs)
                .map(|(s, p)| p * (s - y).max(0.0))
                .sum());
        }
        if y <= 0.0 {
            return Ok(self.raw_mean() - y);
        }
        let v = match &self.family {
            Family::ParetoShifted { beta, scale } => scale / (beta - 1.0) * (1.0 + y / scale).powf(1.0 - beta),
            Family::Exponential { rate } => (-rate * y).exp() / rate,
            Family::Weibull { shape, scale } => {
                let a = 1.0 / shape;
                let z = (y / scale).powf(*shape);
                scale / shape * gamma(a) * gamma_ur(a, z)
            }
            Family::Lognormal { .. } => {
                // substitute u = e^v so the integrand decays on a unit scale
                let f = |v: f64| {
                    let u = v.exp();
                    let t = self.raw_tail(u);
                    if t == 0.0 {
                        0.0
                    } else {
                        t * u
                    }
                };
                integrate(f, y.ln(), f64::INFINITY, QuadOptions::new(1e-300, 1e-12))?.value
            }
            Family::Lattice { .. } => unreachable!(),
        };
        Ok(v)
    }

    /// `∫_x^∞ F̄(t) dt` without the clamp at 1.
    pub fn tail_integral(&self, x: f64) -> Result<f64> {
        self.raw_tail_integral(x + self.shift)
    }

    /// Integrated (second) tail `min(1, ∫_x^∞ F̄(t) dt)`, for `x ≥ 0`.
    pub fn integrated_tail(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::invalid(format!("integrated tail needs x ≥ 0, got {x}")));
        }
        Ok(self.tail_integral(x)?.min(1.0))
    }

    /// Mean of the positive part, `∫_0^∞ F̄`.
    pub fn positive_mean(&self) -> Result<f64> {
        self.tail_integral(0.0)
    }

    /// A point beyond which the hazard rate is nonincreasing, when the
    /// family is known to have one. Past this point `F̄(y - h) / F̄(y)` is
    /// nonincreasing in `y` for every `h > 0`.
    pub fn decreasing_hazard_from(&self) -> Option<f64> {
        let lower = self.lower_endpoint();
        match &self.family {
            Family::ParetoShifted { .. } | Family::Weibull { .. } | Family::Exponential { .. } => Some(lower),
            Family::Lognormal { mu, sigma } => {
                let z = lognormal_hazard_mode(*sigma);
                Some((mu + sigma * z).exp() - self.shift)
            }
            Family::Lattice { .. } => None,
        }
    }

    /// Smallest `x` with `F̄(x) ≤ p`, for `p ∈ (0, 1)`.
    pub fn tail_quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("tail quantile needs p in (0,1), got {p}")));
        }
        let raw = match &self.family {
            Family::ParetoShifted { beta, scale } => scale * (p.powf(-1.0 / beta) - 1.0),
            Family::Weibull { shape, scale } => scale * (-p.ln()).powf(1.0 / shape),
            Family::Exponential { rate } => -p.ln() / rate,
            Family::Lattice { support, .. } => {
                let idx = support.iter().position(|&s| self.raw_tail(s) <= p).unwrap();
                support[idx]
            }
            Family::Lognormal { .. } => {
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                while self.raw_tail(hi) > p {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.raw_tail(mid) > p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        };
        Ok(raw - self.shift)
    }

    /// One draw of the shifted increment.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let raw = match &self.family {
            Family::Lattice { support, .. } => {
                let u: f64 = rng.random();
                let idx = self.cumulative.partition_point(|&c| c <= u);
                support[idx.min(support.len() - 1)]
            }
            Family::Lognormal { mu, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                (mu + sigma * z).exp()
            }
            _ => {
                // u in (0, 1] keeps the inverse tail finite
                let u = 1.0 - rng.random::<f64>();
                match &self.family {
                    Family::ParetoShifted { beta, scale } => scale * (u.powf(-1.0 / beta) - 1.0),
                    Family::Weibull { shape, scale } => scale * (-u.ln()).powf(1.0 / shape),
                    Family::Exponential { rate } => -u.ln() / rate,
                    _ => unreachable!(),
                }
            }
        };
        raw - self.shift
    }

    /// Reproducible stream of i.i.d. increments.
    pub fn sample_stream(&self, seed: u64) -> SampleStream {
        SampleStream {
            dist: self.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Iterator over increments; owns its generator.
#[derive(Debug, Clone)]
pub struct SampleStream {
    dist: TailDistribution,
    rng: ChaCha8Rng,
}

impl Iterator for SampleStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.dist.sample(&mut self.rng))
    }
}

fn std_normal_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// `φ(z) / Φ̄(z)`.
fn inverse_mills(z: f64) -> f64 {
    if z > 30.0 {
        let zi = 1.0 / z;
        return z + zi - 2.0 * zi * zi * zi;
    }
    let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi / std_normal_tail(z)
}

/// Standardized location of the lognormal hazard maximum: the root of
/// `φ(z)/Φ̄(z) = z + sigma`.
fn lognormal_hazard_mode(sigma: f64) -> f64 {
    let g = |z: f64| inverse_mills(z) - z - sigma;
    let (mut lo, mut hi) = (-40.0_f64, 1.0_f64);
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
