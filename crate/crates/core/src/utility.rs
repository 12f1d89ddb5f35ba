//! Rate utilities `g_i`: positive, strictly increasing maps of a user's rate.

use crate::capacity::LogBase;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityFamily {
    /// `g(x) = x`
    Identity,
    /// `g(x) = log(1 + x)` in the scenario's log base.
    Log1p,
    /// `g(x) = x^gamma` with `0 < gamma < 1`.
    Power(f64),
}

/// Utility family plus optional per-user positive weights (`g_i = w_i g`).
#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySpec {
    family: UtilityFamily,
    per_user_scale: Option<Vec<f64>>,
}

impl Default for UtilitySpec {
    fn default() -> Self {
        Self::new(UtilityFamily::Identity)
    }
}

impl UtilitySpec {
    pub fn new(family: UtilityFamily) -> Self {
        Self { family, per_user_scale: None }
    }

    pub fn identity() -> Self {
        Self::new(UtilityFamily::Identity)
    }

    pub fn log1p() -> Self {
        Self::new(UtilityFamily::Log1p)
    }

    pub fn power(gamma: f64) -> Result<Self> {
        let spec = Self::new(UtilityFamily::Power(gamma));
        spec.validate_family()?;
        Ok(spec)
    }

    pub fn with_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        if let Some(w) = scale.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
            return Err(invalid(format!("utility weights must be positive, got {w}")));
        }
        self.per_user_scale = Some(scale);
        Ok(self)
    }

    pub fn family(&self) -> UtilityFamily {
        self.family
    }

    pub fn per_user_scale(&self) -> Option<&[f64]> {
        self.per_user_scale.as_deref()
    }

    fn validate_family(&self) -> Result<()> {
        if let UtilityFamily::Power(g) = self.family {
            if !(g > 0.0 && g < 1.0) {
                return Err(invalid(format!("power utility needs 0 < gamma < 1, got {g}")));
            }
        }
        Ok(())
    }

    /// Checks the family parameters and that weights (if any) cover `n` users.
    pub fn validate(&self, n: usize) -> Result<()> {
        self.validate_family()?;
        if let Some(w) = &self.per_user_scale {
            if w.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: w.len() });
            }
        }
        Ok(())
    }

    pub fn is_strictly_concave(&self) -> bool {
        !matches!(self.family, UtilityFamily::Identity)
    }

    /// True when every user has the same weight.
    pub fn is_shared(&self) -> bool {
        match &self.per_user_scale {
            None => true,
            Some(w) => w.iter().all(|&x| x == w[0]),
        }
    }

    pub fn scale(&self, i: usize) -> f64 {
        self.per_user_scale.as_ref().map_or(1.0, |w| w[i])
    }

    /// `g_i(x)`.
    pub fn value(&self, i: usize, x: f64, base: LogBase) -> f64 {
        let w = self.scale(i);
        w * match self.family {
            UtilityFamily::Identity => x,
            UtilityFamily::Log1p => base.log1p(x),
            UtilityFamily::Power(g) => x.powf(g),
        }
    }

    /// `g_i'(x)`; infinite at 0 for the power family.
    pub fn derivative(&self, i: usize, x: f64, base: LogBase) -> f64 {
        let w = self.scale(i);
        w * match self.family {
            UtilityFamily::Identity => 1.0,
            UtilityFamily::Log1p => 1.0 / ((1.0 + x) * base.ln_base()),
            UtilityFamily::Power(g) => g * x.powf(g - 1.0),
        }
    }

    /// `(g_i')^{-1}(z)` for `z > 0`, clamped at 0 where the marginal utility
    /// at 0 is already below `z`. Identity has no inverse.
    pub fn inverse_derivative(&self, i: usize, z: f64, base: LogBase) -> Result<f64> {
        let w = self.scale(i);
        let x = match self.family {
            UtilityFamily::Identity => {
                return Err(Error::Unsupported("identity utility has a constant derivative".into()))
            }
            UtilityFamily::Log1p => w / (z * base.ln_base()) - 1.0,
            UtilityFamily::Power(g) => (z / (w * g)).powf(1.0 / (g - 1.0)),
        };
        Ok(x.max(0.0))
    }

    /// Upper bound on `|g_i''|` over `[lo, inf)`; infinite when unbounded.
    pub fn curvature_bound(&self, i: usize, lo: f64, base: LogBase) -> f64 {
        let w = self.scale(i);
        w * match self.family {
            UtilityFamily::Identity => 0.0,
            UtilityFamily::Log1p => 1.0 / ((1.0 + lo).powi(2) * base.ln_base()),
            UtilityFamily::Power(g) if lo > 0.0 => g * (1.0 - g) * lo.powf(g - 2.0),
            UtilityFamily::Power(_) => f64::INFINITY,
        }
    }
}
