//! Type distributions on `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numeric::{integrate, QUAD_TOL};

/// A strictly positive density on `[0, 1]` given by its cdf, pdf and quantile.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum TypeDistribution {
    #[default]
    Uniform,
    /// `F(t) = t^alpha`.
    Power { alpha: f64 },
}

impl TypeDistribution {
    pub fn uniform() -> Self {
        TypeDistribution::Uniform
    }

    pub fn power(alpha: f64) -> Result<Self> {
        let d = TypeDistribution::Power { alpha };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TypeDistribution::Uniform => Ok(()),
            TypeDistribution::Power { alpha } if alpha.is_finite() && alpha > 0.0 => Ok(()),
            TypeDistribution::Power { alpha } => Err(CoreError::InvalidDistribution(format!(
                "power exponent must be positive and finite, got {alpha}"
            ))),
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match *self {
            TypeDistribution::Uniform => t,
            TypeDistribution::Power { alpha } => t.powf(alpha),
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        match *self {
            TypeDistribution::Uniform => 1.0,
            TypeDistribution::Power { alpha } => alpha * t.powf(alpha - 1.0),
        }
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        match *self {
            TypeDistribution::Uniform => q,
            TypeDistribution::Power { alpha } => q.powf(1.0 / alpha),
        }
    }

    pub fn name(&self) -> String {
        self.to_string()
    }

    /// `∫_a^b g(t) dF(t)`, computed as `∫_{F(a)}^{F(b)} g(Q(u)) du` so densities
    /// that blow up at 0 never enter the integrand.
    pub fn integrate_df(&self, g: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        integrate(|u| g(self.quantile(u)), self.cdf(a), self.cdf(b), QUAD_TOL)
    }

    /// `∫_a^b t dF(t)`.
    pub fn truncated_mean(&self, a: f64, b: f64) -> Result<f64> {
        if !(a <= b) {
            return Err(CoreError::OutOfDomain {
                what: "a",
                value: a,
                range: format!("[0, b = {b}]"),
            });
        }
        Ok(self.integrate_df(|t| t, a.max(0.0), b.min(1.0)))
    }

    pub fn mean(&self) -> f64 {
        match *self {
            TypeDistribution::Uniform => 0.5,
            TypeDistribution::Power { alpha } => alpha / (alpha + 1.0),
        }
    }
}

impl fmt::Display for TypeDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeDistribution::Uniform => write!(f, "uniform"),
            TypeDistribution::Power { alpha } => write!(f, "power:{alpha}"),
        }
    }
}

impl FromStr for TypeDistribution {
    type Err = CoreError;

    /// Accepts `uniform` or `power:<alpha>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("uniform") {
            return Ok(TypeDistribution::Uniform);
        }
        if let Some(rest) = s.strip_prefix("power:") {
            let alpha: f64 = rest.trim().parse().map_err(|_| {
                CoreError::InvalidDistribution(format!("cannot parse exponent in {s:?}"))
            })?;
            return TypeDistribution::power(alpha);
        }
        Err(CoreError::InvalidDistribution(format!(
            "unknown distribution {s:?}; expected uniform or power:<alpha>"
        )))
    }
}
