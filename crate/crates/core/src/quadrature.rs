//! Adaptive Gauss–Kronrod quadrature (7-point Gauss embedded in 15-point
//! Kronrod) with global bisection of the worst subinterval.
//!
//! Semi-infinite ranges `[a, ∞)` are mapped onto `[0, 1)` with
//! `x = a + t / (1 - t)`. The Kronrod nodes never touch the endpoints, so
//! integrable endpoint singularities are tolerated; they just cost more
//! subdivisions.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances and limits for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_intervals: 2000,
        }
    }
}

impl QuadOptions {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

/// Value and error estimate of a converged integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, &node) in XGK.iter().take(7).enumerate() {
        let dx = half * node;
        let pair = f(center - dx) + f(center + dx);
        kron += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kron * half;
    let error = ((kron - gauss) * half).abs();
    Segment { a, b, value, error }
}

/// Integrates `f` over `[a, b]`; `b` may be `f64::INFINITY`.
///
/// Converges once the summed error estimate is below
/// `max(abs_tol, rel_tol * |value|)`. Non-finite integrand values are an
/// error rather than silently propagated.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<Quadrature> {
    if a.is_nan() || b.is_nan() || a.is_infinite() {
        return Err(Error::invalid("integration limits must be finite (upper may be +inf)"));
    }
    if a == b {
        return Ok(Quadrature {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        });
    }
    if b < a {
        let q = integrate(f, b, a, opts)?;
        return Ok(Quadrature { value: -q.value, ..q });
    }
    if b.is_infinite() {
        let mapped = move |t: f64| {
            let one_minus = 1.0 - t;
            let x = a + t / one_minus;
            let fx = f(x);
            if fx == 0.0 {
                0.0
            } else {
                fx / (one_minus * one_minus)
            }
        };
        return integrate_finite(&mapped, 0.0, 1.0, opts);
    }
    integrate_finite(&f, a, b, opts)
}

/// Integrates over consecutive pieces `[p0, p1], [p1, p2], …` and sums.
/// Useful when the integrand has known kinks.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: F, points: &[f64], opts: QuadOptions) -> Result<Quadrature> {
    let mut total = Quadrature {
        value: 0.0,
        error: 0.0,
        intervals: 0,
    };
    for w in points.windows(2) {
        let q = integrate(&f, w[0], w[1], opts)?;
        total.value += q.value;
        total.error += q.error;
        total.intervals += q.intervals;
    }
    Ok(total)
}

fn integrate_finite<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, opts: QuadOptions) -> Result<Quadrature> {
    let first = kronrod(f, a, b);
    if !first.value.is_finite() {
        return Err(Error::Quadrature {
            achieved: f64::INFINITY,
            reason: "non-finite integrand".into(),
        });
    }
    let mut heap = BinaryHeap::new();
    let mut value = first.value;
    let mut error = first.error;
    heap.push(first);

    while error > opts.target(value) {
        if heap.len() >= opts.max_intervals {
            return Err(Error::Quadrature {
                achieved: error,
                reason: format!("subdivision limit {} reached", opts.max_intervals),
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval exhausted at machine resolution
            heap.push(worst);
            if error <= 1e3 * opts.target(value) {
                break;
            }
            return Err(Error::Quadrature {
                achieved: error,
                reason: "interval width at machine precision".into(),
            });
        }
        let left = kronrod(f, worst.a, mid);
        let right = kronrod(f, mid, worst.b);
        if !(left.value.is_finite() && right.value.is_finite()) {
            return Err(Error::Quadrature {
                achieved: f64::INFINITY,
                reason: "non-finite integrand".into(),
            });
        }
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }

    // re-sum to shed the drift of incremental updates
    let value = heap.iter().map(|s| s.value).sum();
    let error = heap.iter().map(|s| s.error).sum();
    Ok(Quadrature {
        value,
        error,
        intervals: heap.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let q = integrate(|x| 3.0 * x * x, 0.0, 2.0, QuadOptions::default()).unwrap();
        assert!((q.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn semi_infinite_exponential() {
        let q = integrate(|x: f64| (-x).exp(), 2.0, f64::INFINITY, QuadOptions::default()).unwrap();
        assert!((q.value - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn endpoint_singularity() {
        let q = integrate(|x: f64| x.powf(-0.5), 0.0, 1.0, QuadOptions::new(1e-12, 1e-12)).unwrap();
        assert!((q.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let q = integrate(|x| x, 1.0, 0.0, QuadOptions::default()).unwrap();
        assert!((q.value + 0.5).abs() < 1e-14);
    }

    #[test]
    fn divergent_integral_reports_error() {
        let err = integrate(|x: f64| 1.0 / x, 0.0, 1.0, QuadOptions::new(1e-12, 1e-12)).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }
}
