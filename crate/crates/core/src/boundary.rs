//! Boundary functions `g` on the nonnegative integers.
//!
//! Infinite values are first-class: once `g(n) = ∞` every later value is
//! infinite too, and those indices drop out of every sum since `F̄(∞) = 0`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dist::TailDistribution;
use crate::error::{Error, Result};

/// A boundary value that serializes `+∞` as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryValue(pub f64);

impl Serialize for BoundaryValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for BoundaryValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(BoundaryValue(v)),
            Repr::Str(s) if s == "inf" => Ok(BoundaryValue(f64::INFINITY)),
            Repr::Str(s) => Err(serde::de::Error::custom(format!(
                "boundary value must be a number or \"inf\", got \"{s}\""
            ))),
        }
    }
}

/// How a tabulated boundary continues past its last entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum TailRule {
    /// `g(n) = g(N) + slope·(n - N)` for `n > N`.
    LinearExtend { slope: f64 },
    /// `g(n) = ∞` for `n > N`.
    InfiniteFrom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryKind {
    /// `g(n) = slope·n`.
    Linear { slope: f64 },
    /// `g(1..=N)` listed explicitly.
    Tabulated {
        #[serde(default = "zero_value")]
        g0: BoundaryValue,
        values: Vec<BoundaryValue>,
        tail: TailRule,
    },
    /// `g(n) = base(n) + shift·n`.
    Composite { base: Box<Boundary>, shift: f64 },
}

fn zero_value() -> BoundaryValue {
    BoundaryValue(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBoundary", into = "RawBoundary")]
pub struct Boundary {
    kind: BoundaryKind,
    class_constant: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawBoundary {
    #[serde(flatten)]
    kind: BoundaryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_constant: Option<f64>,
}

impl TryFrom<RawBoundary> for Boundary {
    type Error = Error;

    fn try_from(raw: RawBoundary) -> Result<Self> {
        let b = Boundary::new(raw.kind)?;
        match raw.class_constant {
            Some(c) => b.with_class_constant(c),
            None => Ok(b),
        }
    }
}

impl From<Boundary> for RawBoundary {
    fn from(b: Boundary) -> Self {
        RawBoundary {
            kind: b.kind,
            class_constant: b.class_constant,
        }
    }
}

/// Outcome of a class check: holds, or the least index violating it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCheck {
    pub holds: bool,
    pub first_violation: Option<u64>,
}

impl Boundary {
    pub fn new(kind: BoundaryKind) -> Result<Self> {
        match &kind {
            BoundaryKind::Linear { slope } => {
                if !(slope.is_finite() && *slope >= 0.0) {
                    return Err(Error::invalid(format!("linear slope must be finite and ≥ 0, got {slope}")));
                }
            }
            BoundaryKind::Tabulated { g0, values, tail } => {
                if values.is_empty() {
                    return Err(Error::invalid("tabulated boundary needs at least g(1)"));
                }
                let all = std::iter::once(g0).chain(values.iter());
                if all.clone().any(|v| v.0.is_nan() || v.0 < 0.0) {
                    return Err(Error::invalid("boundary values must be nonnegative"));
                }
                if g0.0.is_infinite() {
                    return Err(Error::invalid("g(0) must be finite"));
                }
                if let Some(first_inf) = values.iter().position(|v| v.0.is_infinite()) {
                    if values[first_inf..].iter().any(|v| v.0.is_finite()) {
                        return Err(Error::invalid("once g(n) = ∞ every later value must be ∞"));
                    }
                }
                if let TailRule::LinearExtend { slope } = tail {
                    if !(slope.is_finite() && *slope >= 0.0) {
                        return Err(Error::invalid("tail slope must be finite and ≥ 0"));
                    }
                }
            }
            BoundaryKind::Composite { shift, .. } => {
                if !(shift.is_finite() && *shift >= 0.0) {
                    return Err(Error::invalid("composite shift must be finite and ≥ 0"));
                }
            }
        }
        Ok(Self {
            kind,
            class_constant: None,
        })
    }

    pub fn linear(slope: f64) -> Result<Self> {
        Self::new(BoundaryKind::Linear { slope })
    }

    pub fn zero() -> Self {
        Self::linear(0.0).unwrap()
    }

    pub fn tabulated(values: Vec<f64>, tail: TailRule) -> Result<Self> {
        Self::new(BoundaryKind::Tabulated {
            g0: BoundaryValue(0.0),
            values: values.into_iter().map(BoundaryValue).collect(),
            tail,
        })
    }

    /// `g + shift·n`, written `g^a` with `a = shift`.
    pub fn plus_linear(&self, shift: f64) -> Result<Self> {
        Self::new(BoundaryKind::Composite {
            base: Box::new(self.clone()),
            shift,
        })
    }

    /// Declares membership of `G_c`; rejected unless it actually holds.
    pub fn with_class_constant(mut self, c: f64) -> Result<Self> {
        let check = self.verify_class(c);
        if !check.holds {
            return Err(Error::invalid(format!(
                "boundary violates class constant {c} at n = {}",
                check.first_violation.unwrap()
            )));
        }
        self.class_constant = Some(c);
        Ok(self)
    }

    pub fn kind(&self) -> &BoundaryKind {
        &self.kind
    }

    pub fn class_constant(&self) -> Option<f64> {
        self.class_constant
    }

    /// `g(n)`; `+∞` allowed.
    pub fn eval(&self, n: u64) -> f64 {
        match &self.kind {
            BoundaryKind::Linear { slope } => slope * n as f64,
            BoundaryKind::Tabulated { g0, values, tail } => {
                if n == 0 {
                    return g0.0;
                }
                let len = values.len() as u64;
                if n <= len {
                    return values[(n - 1) as usize].0;
                }
                match tail {
                    TailRule::InfiniteFrom => f64::INFINITY,
                    TailRule::LinearExtend { slope } => values[(len - 1) as usize].0 + slope * (n - len) as f64,
                }
            }
            BoundaryKind::Composite { base, shift } => base.eval(n) + shift * n as f64,
        }
    }

    /// `(n₀, slope)` such that `g(n) = g(n₀) + slope·(n - n₀)` for all
    /// `n ≥ n₀`; `None` when the boundary is infinite from some index on.
    pub fn linear_tail(&self) -> Option<(u64, f64)> {
        match &self.kind {
            BoundaryKind::Linear { slope } => Some((0, *slope)),
            BoundaryKind::Tabulated { values, tail, .. } => match tail {
                TailRule::LinearExtend { slope } if values.last().unwrap().0.is_finite() => {
                    Some((values.len() as u64, *slope))
                }
                _ => None,
            },
            BoundaryKind::Composite { base, shift } => base.linear_tail().map(|(n0, s)| (n0, s + shift)),
        }
    }

    /// First index with `g(n) = ∞`, if any.
    pub fn first_infinite(&self) -> Option<u64> {
        match &self.kind {
            BoundaryKind::Linear { .. } => None,
            BoundaryKind::Tabulated { values, tail, .. } => {
                if let Some(i) = values.iter().position(|v| v.0.is_infinite()) {
                    return Some(i as u64 + 1);
                }
                match tail {
                    TailRule::InfiniteFrom => Some(values.len() as u64 + 1),
                    TailRule::LinearExtend { .. } => None,
                }
            }
            BoundaryKind::Composite { base, .. } => base.first_infinite(),
        }
    }

    /// Number of leading indices that are not described by the linear tail.
    fn table_len(&self) -> u64 {
        match &self.kind {
            BoundaryKind::Linear { .. } => 0,
            BoundaryKind::Tabulated { values, .. } => values.len() as u64,
            BoundaryKind::Composite { base, .. } => base.table_len(),
        }
    }

    /// Checks `g(1) ≥ c` and `g(n+1) ≥ g(n) + c` for all `n ≥ 1`.
    pub fn verify_class(&self, c: f64) -> ClassCheck {
        let fail = |n| ClassCheck {
            holds: false,
            first_violation: Some(n),
        };
        if !(self.eval(1) >= c) {
            return fail(1);
        }
        // explicit range plus one step into the tail covers the junction
        let last = self.table_len() + 1;
        for n in 1..=last {
            if !(self.eval(n + 1) >= self.eval(n) + c) {
                return fail(n);
            }
        }
        if let Some((_, slope)) = self.linear_tail() {
            if slope < c {
                return fail(last + 1);
            }
        }
        ClassCheck {
            holds: true,
            first_violation: None,
        }
    }

    /// Monotone piecewise-linear extension to the nonnegative reals.
    pub fn extend_to_real(&self) -> Result<RealBoundary> {
        if !(self.eval(1) >= self.eval(0)) {
            return Err(Error::NonMonotoneBoundary { index: 0 });
        }
        let check = self.verify_class(0.0);
        if !check.holds {
            return Err(Error::NonMonotoneBoundary {
                index: check.first_violation.unwrap(),
            });
        }
        Ok(RealBoundary { base: self.clone() })
    }

    /// `sup_{n≥1} F̄(x + g(n-1)) / F̄(x + g(n))`.
    ///
    /// Exact once the scan reaches the linear part of the boundary at a
    /// point where the law's hazard rate is nonincreasing: from there the
    /// per-index ratio can only shrink. Otherwise the scan runs to
    /// `scan_cap` and fails with the best value seen.
    pub fn v_g(&self, dist: &TailDistribution, x: f64, scan_cap: u64) -> Result<f64> {
        let hazard_from = dist.decreasing_hazard_from();
        let lin = self.linear_tail();
        let mut best = 1.0_f64;
        for n in 1..=scan_cap {
            let prev = self.eval(n - 1);
            let cur = self.eval(n);
            if cur.is_infinite() {
                // ratio of a positive tail over F̄(∞) = 0
                return Ok(if prev.is_finite() { f64::INFINITY } else { best });
            }
            let denom = dist.tail(x + cur);
            if denom <= 0.0 {
                return Err(Error::ZeroTail { x: x + cur });
            }
            best = best.max(dist.tail(x + prev) / denom);
            if let (Some((n0, _)), Some(h0)) = (lin, hazard_from) {
                if n > n0 && x + prev >= h0 {
                    return Ok(best);
                }
            }
        }
        Err(Error::SupNotCertified {
            scanned: scan_cap,
            best,
        })
    }
}

/// A boundary extended to `t ∈ [0, ∞)` by linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct RealBoundary {
    base: Boundary,
}

impl RealBoundary {
    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.base.eval(0);
        }
        let n = t.floor();
        let k = n as u64;
        let lo = self.base.eval(k);
        if t == n {
            return lo;
        }
        let hi = self.base.eval(k + 1);
        if hi.is_infinite() {
            return f64::INFINITY;
        }
        lo + (hi - lo) * (t - n)
    }

    pub fn integer_boundary(&self) -> &Boundary {
        &self.base
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_values() {
        let b = Boundary::linear(2.0).unwrap();
        assert_eq!(b.eval(5), 10.0);
        assert_eq!(b.eval(0), 0.0);
    }

    #[test]
    fn tabulated_infinite_tail() {
        let b = Boundary::tabulated(vec![5.0, 0.0], TailRule::InfiniteFrom).unwrap();
        assert_eq!(b.eval(3), f64::INFINITY);
        assert_eq!(b.eval(2), 0.0);
        assert_eq!(b.eval(0), 0.0);
        assert_eq!(b.first_infinite(), Some(3));
    }

    #[test]
    fn infinite_values_must_persist() {
        let bad = Boundary::tabulated(vec![f64::INFINITY, 0.0], TailRule::InfiniteFrom);
        assert!(bad.is_err());
        assert!(Boundary::tabulated(vec![-1.0], TailRule::InfiniteFrom).is_err());
    }

    #[test]
    fn class_membership() {
        let b = Boundary::linear(2.0).unwrap();
        assert!(b.verify_class(2.0).holds);
        let c3 = b.verify_class(3.0);
        assert!(!c3.holds);
        assert_eq!(c3.first_violation, Some(1));
        let gm = Boundary::tabulated(vec![1e6, 0.0], TailRule::LinearExtend { slope: 0.0 }).unwrap();
        let r = gm.verify_class(0.0);
        assert_eq!(r.first_violation, Some(1));
    }

    #[test]
    fn class_check_reaches_tail() {
        let b = Boundary::tabulated(vec![1.0, 2.0, 3.0], TailRule::LinearExtend { slope: 0.5 }).unwrap();
        assert!(b.verify_class(0.5).holds);
        assert_eq!(b.verify_class(1.0).first_violation, Some(3));
    }

    #[test]
    fn extension_interpolates() {
        let b = Boundary::linear(1.0).unwrap().extend_to_real().unwrap();
        assert_eq!(b.eval(2.5), 2.5);
        let t = Boundary::tabulated(vec![1.0, 3.0, 6.0], TailRule::LinearExtend { slope: 3.0 })
            .unwrap()
            .extend_to_real()
            .unwrap();
        assert_eq!(t.eval(1.5), 2.0);
        assert_eq!(t.eval(3.0), 6.0);
        assert_eq!(t.eval(4.0), 9.0);
        let bad = Boundary::tabulated(vec![3.0, 1.0], TailRule::InfiniteFrom).unwrap();
        assert!(matches!(bad.extend_to_real(), Err(Error::NonMonotoneBoundary { index: 1 })));
    }

    #[test]
    fn v_g_examples() {
        let d = TailDistribution::pareto(2.0, 1.0).unwrap();
        let b = Boundary::linear(1.0).unwrap();
        assert!((b.v_g(&d, 0.0, 1_000_000).unwrap() - 4.0).abs() < 1e-12);
        let x: f64 = 1e4;
        // sup is attained at n = 1: F̄(x)/F̄(x+1)
        let expected = ((x + 2.0) / (x + 1.0)).powi(2);
        assert!((b.v_g(&d, x, 1_000_000).unwrap() - expected).abs() < 1e-12);
        let e = TailDistribution::exponential(1.0).unwrap();
        for x in [0.0, 3.0, 50.0] {
            assert!((b.v_g(&e, x, 1_000_000).unwrap() - std::f64::consts::E).abs() < 1e-9);
        }
    }

    #[test]
    fn v_g_on_lattice_reports_zero_tail() {
        let d = TailDistribution::lattice(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let b = Boundary::linear(1.0).unwrap();
        assert!(b.v_g(&d, 0.0, 100).is_err());
    }

    #[test]
    fn json_with_inf() {
        let b: Boundary = serde_json::from_str(
            r#"{"kind":"tabulated","values":[2.0,"inf"],"tail":{"rule":"infinite_from"}}"#,
        )
        .unwrap();
        assert_eq!(b.eval(2), f64::INFINITY);
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.contains("\"inf\""));
        let back: Boundary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
        let declared: std::result::Result<Boundary, _> =
            serde_json::from_str(r#"{"kind":"linear","slope":1.0,"class_constant":2.0}"#);
        assert!(declared.is_err());
    }
}
