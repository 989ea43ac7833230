//! Utility and link-delay function catalog.
//!
//! Solvers only talk to the [`UtilityFunction`] and [`DelayFunction`] traits,
//! so new queueing models can be added as additional [`DelaySpec`] variants
//! without touching solver code. Lipschitz and strong-convexity constants are
//! always relative to a bounded region: `q/σ` has neither property on `(0, ∞)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing, strictly concave source utility.
pub trait UtilityFunction {
    fn value(&self, x: f64) -> f64;
    fn deriv(&self, x: f64) -> f64;
    fn second_deriv(&self, x: f64) -> f64;
    /// The unique `x` with `U'(x) = y`, not clipped to any box.
    fn inv_deriv(&self, y: f64) -> Result<f64>;
    /// Modulus of strong convexity of `-U` on `[lo, hi]`.
    fn concavity_modulus(&self, lo: f64, hi: f64) -> f64;
}

/// Convex, strictly decreasing link delay as a function of the link margin.
pub trait DelayFunction {
    fn value(&self, sigma: f64) -> f64;
    fn deriv(&self, sigma: f64) -> f64;
    fn second_deriv(&self, sigma: f64) -> f64;
    /// The unique `σ > 0` with `D'(σ) = y`; requires `y < 0`.
    fn inv_deriv(&self, y: f64) -> Result<f64>;
    fn constants(&self, domain: WorkingDomain) -> Result<DelayConstants>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilitySpec {
    Log,
    WeightedLog { weight: f64 },
}

impl UtilitySpec {
    fn weight(&self) -> f64 {
        match *self {
            UtilitySpec::Log => 1.0,
            UtilitySpec::WeightedLog { weight } => weight,
        }
    }

    /// Scales the utility by a positive factor.
    pub fn scaled(&self, factor: f64) -> UtilitySpec {
        UtilitySpec::WeightedLog { weight: self.weight() * factor }
    }
}

impl UtilityFunction for UtilitySpec {
    fn value(&self, x: f64) -> f64 {
        self.weight() * x.ln()
    }

    fn deriv(&self, x: f64) -> f64 {
        self.weight() / x
    }

    fn second_deriv(&self, x: f64) -> f64 {
        -self.weight() / (x * x)
    }

    fn inv_deriv(&self, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Err(Error::NonPositivePrice(y));
        }
        Ok(self.weight() / y)
    }

    fn concavity_modulus(&self, _lo: f64, hi: f64) -> f64 {
        self.weight() / (hi * hi)
    }
}

/// Region on which delay constants are evaluated; `0 < lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkingDomain {
    pub lo: f64,
    pub hi: f64,
}

impl WorkingDomain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::DegenerateDomain { lo, hi });
        }
        Ok(WorkingDomain { lo, hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayConstants {
    /// Lipschitz constant of `D` on the domain.
    pub lipschitz: f64,
    /// Strong-convexity modulus of `D` on the domain.
    pub convexity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelaySpec {
    /// M/M/1 queue: `D(σ) = q/σ`.
    Mm1 { q: f64 },
}

impl DelayFunction for DelaySpec {
    fn value(&self, sigma: f64) -> f64 {
        match *self {
            DelaySpec::Mm1 { q } => q / sigma,
        }
    }

    fn deriv(&self, sigma: f64) -> f64 {
        match *self {
            DelaySpec::Mm1 { q } => -q / (sigma * sigma),
        }
    }

    fn second_deriv(&self, sigma: f64) -> f64 {
        match *self {
            DelaySpec::Mm1 { q } => 2.0 * q / (sigma * sigma * sigma),
        }
    }

    fn inv_deriv(&self, y: f64) -> Result<f64> {
        if y >= 0.0 {
            return Err(Error::NonNegativeSlope(y));
        }
        match *self {
            DelaySpec::Mm1 { q } => Ok((-q / y).sqrt()),
        }
    }

    fn constants(&self, domain: WorkingDomain) -> Result<DelayConstants> {
        let domain = WorkingDomain::new(domain.lo, domain.hi)?;
        match *self {
            DelaySpec::Mm1 { q } => Ok(DelayConstants {
                lipschitz: q / (domain.lo * domain.lo),
                convexity: 2.0 * q / domain.hi.powi(3),
            }),
        }
    }
}
