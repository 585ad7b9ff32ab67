//! Maps between bounded external parameters and the unconstrained
//! internal coordinates the optimiser works in.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Transform {
    Identity,
    /// p = lo + e^u
    Lower(f64),
    /// p = hi − e^u
    Upper(f64),
    /// p = lo + (hi − lo)·σ(u)
    Both(f64, f64),
}

const EDGE: f64 = 1e-12;

impl Transform {
    pub(crate) fn for_bounds(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(invalid(format!("invalid bounds [{lower}, {upper}]")));
        }
        Ok(match (lower.is_finite(), upper.is_finite()) {
            (false, false) => Self::Identity,
            (true, false) => Self::Lower(lower),
            (false, true) => Self::Upper(upper),
            (true, true) => Self::Both(lower, upper),
        })
    }

    pub(crate) fn to_external(self, u: f64) -> f64 {
        match self {
            Self::Identity => u,
            Self::Lower(lo) => lo + u.exp(),
            Self::Upper(hi) => hi - u.exp(),
            Self::Both(lo, hi) => {
                let s = if u >= 0.0 {
                    1.0 / (1.0 + (-u).exp())
                } else {
                    let e = u.exp();
                    e / (1.0 + e)
                };
                lo + (hi - lo) * s
            }
        }
    }

    /// Inverse mapping; values sitting on a bound are nudged just inside.
    pub(crate) fn to_internal(self, p: f64) -> f64 {
        match self {
            Self::Identity => p,
            Self::Lower(lo) => (p - lo).max(nudge(lo)).ln(),
            Self::Upper(hi) => (hi - p).max(nudge(hi)).ln(),
            Self::Both(lo, hi) => {
                let t = ((p - lo) / (hi - lo)).clamp(EDGE, 1.0 - EDGE);
                (t / (1.0 - t)).ln()
            }
        }
    }

    /// dp/du at internal coordinate `u`.
    pub(crate) fn derivative(self, u: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Lower(_) => u.exp(),
            Self::Upper(_) => -u.exp(),
            Self::Both(lo, hi) => {
                let p = self.to_external(u);
                (p - lo) * (hi - p) / (hi - lo)
            }
        }
    }

    /// Whether `p` sits on (numerically indistinguishable from) a bound.
    pub(crate) fn at_bound(self, p: f64, initial: f64) -> bool {
        match self {
            Self::Identity => false,
            Self::Lower(lo) => (p - lo) <= 1e-8 * (initial - lo).abs().max(f64::MIN_POSITIVE),
            Self::Upper(hi) => (hi - p) <= 1e-8 * (hi - initial).abs().max(f64::MIN_POSITIVE),
            Self::Both(lo, hi) => {
                let t = (p - lo) / (hi - lo);
                !(1e-6..=1.0 - 1e-6).contains(&t)
            }
        }
    }
}

fn nudge(bound: f64) -> f64 {
    1e-12 * bound.abs().max(1e-300)
}
