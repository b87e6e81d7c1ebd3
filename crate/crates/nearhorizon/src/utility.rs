//! Terminal utility of total wealth.
//!
//! Utilities act on the total wealth s = Σᵢ xᵢ and must be strictly
//! increasing, concave and five times differentiable on s > 0. Supported
//! families:
//!
//! ```text
//! log:    U(s) = ln s
//! power:  U(s) = c₁/(1−α) s^{1−α} + c₂/(1−β) s^{1−β},   α, β > 0, α, β ≠ 1
//! ```
//!
//! The asymptotic order functions f and g control the error bounds of the
//! horizon expansion: f ≡ 1 and g = ln s + 1 for log utility, while both
//! equal s^{1−α} + s^{1−β} for power mixtures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Terminal utility family, normalized so that a single power (c₂ = 0)
/// carries β = α and vice versa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityFamily {
    Log,
    #[serde(rename = "power")]
    PowerMixture {
        c1: f64,
        alpha: f64,
        c2: f64,
        beta: f64,
    },
}

impl UtilityFamily {
    pub fn log() -> Self {
        UtilityFamily::Log
    }

    /// Builds a power mixture, applying the convention β := α when c₂ = 0
    /// (and α := β when c₁ = 0) so dormant exponents stay meaningful.
    pub fn power_mixture(c1: f64, alpha: f64, c2: f64, beta: f64) -> Result<Self> {
        let (alpha, beta) = if c2 == 0.0 {
            (alpha, alpha)
        } else if c1 == 0.0 {
            (beta, beta)
        } else {
            (alpha, beta)
        };
        let u = UtilityFamily::PowerMixture { c1, alpha, c2, beta };
        u.validate()?;
        Ok(u)
    }

    /// Single power utility c/(1−α) s^{1−α}.
    pub fn power(c: f64, alpha: f64) -> Result<Self> {
        Self::power_mixture(c, alpha, 0.0, alpha)
    }

    /// Checks the family parameters.
    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilityFamily::Log => Ok(()),
            UtilityFamily::PowerMixture { c1, alpha, c2, beta } => {
                if c1 < 0.0 || c2 < 0.0 || (c1 == 0.0 && c2 == 0.0) {
                    return Err(Error::Domain(
                        "power mixture requires c1 ≥ 0, c2 ≥ 0 and c1 + c2 > 0".into(),
                    ));
                }
                if alpha <= 0.0 || beta <= 0.0 {
                    return Err(Error::Domain(
                        "power mixture exponents must be positive".into(),
                    ));
                }
                if alpha == 1.0 || beta == 1.0 {
                    return Err(Error::Domain(
                        "power mixture exponents must differ from 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// U(s), U′(s), …, U⁽ᵒʳᵈᵉʳ⁾(s) as exact analytic derivatives.
    ///
    /// `order` may be at most 5.
    pub fn u_derivs(&self, s: f64, order: usize) -> Result<Vec<f64>> {
        if s <= 0.0 {
            return Err(Error::Domain(format!("wealth must be positive, got {s}")));
        }
        if order > 5 {
            return Err(Error::Domain(format!(
                "derivatives available to order 5, requested {order}"
            )));
        }
        let mut out = Vec::with_capacity(order + 1);
        match *self {
            UtilityFamily::Log => {
                out.push(s.ln());
                // dᵏ/dsᵏ ln s = (−1)^{k−1} (k−1)! s^{−k}
                let mut coeff = 1.0;
                for k in 1..=order {
                    out.push(coeff * s.powi(-(k as i32)));
                    coeff *= -(k as f64);
                }
            }
            UtilityFamily::PowerMixture { c1, alpha, c2, beta } => {
                let mut f1 = c1 / (1.0 - alpha);
                let mut f2 = c2 / (1.0 - beta);
                for k in 0..=order {
                    if k > 0 {
                        f1 *= 1.0 - alpha - (k as f64 - 1.0);
                        f2 *= 1.0 - beta - (k as f64 - 1.0);
                    }
                    out.push(
                        f1 * s.powf(1.0 - alpha - k as f64) + f2 * s.powf(1.0 - beta - k as f64),
                    );
                }
            }
        }
        Ok(out)
    }

    /// Asymptotic order function f: 1 for log, s^{1−α} + s^{1−β} for powers.
    pub fn f_order(&self, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Err(Error::Domain(format!("wealth must be positive, got {s}")));
        }
        Ok(match *self {
            UtilityFamily::Log => 1.0,
            UtilityFamily::PowerMixture { alpha, beta, .. } => {
                s.powf(1.0 - alpha) + s.powf(1.0 - beta)
            }
        })
    }

    /// Uniform integrability bound g: ln s + 1 for log, f for powers.
    pub fn g_bound(&self, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Err(Error::Domain(format!("wealth must be positive, got {s}")));
        }
        Ok(match *self {
            UtilityFamily::Log => s.ln() + 1.0,
            UtilityFamily::PowerMixture { .. } => self.f_order(s)?,
        })
    }
}

/// A strictly positive wealth vector with its cached total.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthPoint {
    x: Vec<f64>,
    s: f64,
}

impl WealthPoint {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Domain("wealth vector must be non-empty".into()));
        }
        if let Some(bad) = x.iter().find(|&&v| !v.is_finite() || v <= 0.0) {
            return Err(Error::Domain(format!(
                "every wealth component must be strictly positive and finite, got {bad}"
            )));
        }
        let s = x.iter().sum();
        Ok(WealthPoint { x, s })
    }

    /// Splits a total wealth equally over `n` assets.
    pub fn split_evenly(s: f64, n: usize) -> Result<Self> {
        if !s.is_finite() || s <= 0.0 || n == 0 {
            return Err(Error::Domain(format!(
                "total wealth must be positive ({s}) over at least one asset ({n})"
            )));
        }
        Self::new(vec![s / n as f64; n])
    }

    pub fn components(&self) -> &[f64] {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Total wealth s = Σ xᵢ.
    pub fn total(&self) -> f64 {
        self.s
    }
}
