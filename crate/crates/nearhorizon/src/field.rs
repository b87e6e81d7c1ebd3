//! Bounded coefficient functions of the stochastic factor.
//!
//! The market coefficients σᵢ(y), λᵢ(y), a(y), b(y) must be smooth with
//! absolutely bounded value, slope and curvature. Two families satisfy
//! this by construction:
//!
//! ```text
//! constant:      f(y) = c
//! tanh-bounded:  f(y) = base + amplitude · tanh((y − center) / scale)
//! ```

use serde::{Deserialize, Serialize};

/// A coefficient function value together with its first two y-derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldValue {
    pub value: f64,
    pub dy: f64,
    pub dyy: f64,
}

/// A bounded, twice continuously differentiable function of the factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarField {
    Constant {
        value: f64,
    },
    TanhBounded {
        base: f64,
        amplitude: f64,
        center: f64,
        scale: f64,
    },
}

impl ScalarField {
    pub fn constant(value: f64) -> Self {
        ScalarField::Constant { value }
    }

    pub fn tanh_bounded(base: f64, amplitude: f64, center: f64, scale: f64) -> Self {
        ScalarField::TanhBounded {
            base,
            amplitude,
            center,
            scale,
        }
    }

    /// Evaluates the field and its first two derivatives at `y`.
    pub fn eval(&self, y: f64) -> FieldValue {
        match *self {
            ScalarField::Constant { value } => FieldValue {
                value,
                dy: 0.0,
                dyy: 0.0,
            },
            ScalarField::TanhBounded {
                base,
                amplitude,
                center,
                scale,
            } => {
                let u = (y - center) / scale;
                let th = u.tanh();
                let sech2 = 1.0 - th * th;
                FieldValue {
                    value: base + amplitude * th,
                    dy: amplitude / scale * sech2,
                    dyy: -2.0 * amplitude / (scale * scale) * th * sech2,
                }
            }
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        self.eval(y).value
    }

    /// Infimum of the field over all of ℝ.
    pub fn lower_bound(&self) -> f64 {
        match *self {
            ScalarField::Constant { value } => value,
            ScalarField::TanhBounded {
                base, amplitude, ..
            } => base - amplitude.abs(),
        }
    }

    /// Supremum of the field over all of ℝ.
    pub fn upper_bound(&self) -> f64 {
        match *self {
            ScalarField::Constant { value } => value,
            ScalarField::TanhBounded {
                base, amplitude, ..
            } => base + amplitude.abs(),
        }
    }

    /// True iff the field is strictly positive everywhere.
    pub fn is_strictly_positive(&self) -> bool {
        self.lower_bound() > 0.0
    }

    /// True iff all parameters are finite (and scale is nonzero for tanh).
    pub fn is_well_formed(&self) -> bool {
        match *self {
            ScalarField::Constant { value } => value.is_finite(),
            ScalarField::TanhBounded {
                base,
                amplitude,
                center,
                scale,
            } => {
                base.is_finite()
                    && amplitude.is_finite()
                    && center.is_finite()
                    && scale.is_finite()
                    && scale != 0.0
            }
        }
    }
}
