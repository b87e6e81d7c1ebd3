//! Market model: n risky assets driven by correlated Brownian motions and a
//! one-dimensional stochastic factor.
//!
//! Asset i carries a volatility field σᵢ(y) and a Sharpe-ratio field λᵢ(y);
//! the factor follows
//!
//! ```text
//! dY = b(Y) dt + a(Y) [ Σᵢ ωᵢ dWᵢ + (1 − Σᵢ ωᵢ²)^{1/2} dW₀ ]
//! ```
//!
//! with W₀ independent of the correlated asset noise W. Drifts are derived,
//! never stored: μᵢ(y) = R + σᵢ(y) λᵢ(y).

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::field::{FieldValue, ScalarField};
use crate::utility::UtilityFamily;

/// Eigenvalue slack allowed when testing positive semi-definiteness of ρ.
pub const PSD_TOLERANCE: f64 = 1e-12;

/// A violated model assumption, named by the invariant it breaks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelViolation {
    #[error("correlation matrix must be symmetric (entry ({i},{j}))")]
    RhoNotSymmetric { i: usize, j: usize },
    #[error("correlation matrix must have unit diagonal (entry {i})")]
    RhoDiagonalNotOne { i: usize },
    #[error("correlation entries must satisfy |rho_ij| <= 1 (entry ({i},{j}) = {value})")]
    RhoEntryOutOfRange { i: usize, j: usize, value: f64 },
    #[error("correlation matrix must be positive semi-definite (min eigenvalue {min_eigenvalue:.3e})")]
    RhoNotPsd { min_eigenvalue: f64 },
    #[error("factor loadings must satisfy |omega_i| < 1 (omega_{i} = {value})")]
    OmegaOutOfRange { i: usize, value: f64 },
    #[error("factor loadings must satisfy 1 - sum omega_i^2 >= 0 (sum = {sum_sq})")]
    OmegaNormTooLarge { sum_sq: f64 },
    #[error("{name} must be strictly positive everywhere")]
    FieldNotPositive { name: String },
    #[error("{name} has non-finite parameters")]
    FieldMalformed { name: String },
    #[error("derived drift mu_{i} is not finite at y = {y}")]
    DriftNotFinite { i: usize, y: f64 },
    #[error("utility exponents must differ from 1")]
    UtilityUnitExponent,
}

/// Diagonal-dominance report for the first-order-condition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub ok: bool,
    /// min over assets and grid points of 2σᵢ(y) − Σ_{j≠i} ρᵢⱼ σⱼ(y).
    pub worst_margin: f64,
    /// Asset index and factor value attaining the worst margin.
    pub worst_point: (usize, f64),
}

/// Diagnostics attached to a successful validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDiagnostics {
    /// ωᵀρω + 1 − Σωᵢ²: the factor's diffusion variance is a²(y) times this.
    /// Equals 1 exactly only when ωᵀρω = Σωᵢ²; reported, never altered.
    pub factor_variance_multiplier: f64,
    pub dominance: DominanceReport,
}

/// Immutable market description. All operations are pure; share freely
/// across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    n: usize,
    sigma: Vec<ScalarField>,
    lambda: Vec<ScalarField>,
    a: ScalarField,
    b: ScalarField,
    omega: Vec<f64>,
    rho: DMatrix<f64>,
    rate: f64,
}

impl MarketModel {
    /// Builds a model, checking only structural consistency (dimensions).
    /// Assumption-level checks live in [`validate_model`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sigma: Vec<ScalarField>,
        lambda: Vec<ScalarField>,
        a: ScalarField,
        b: ScalarField,
        omega: Vec<f64>,
        rho: DMatrix<f64>,
        rate: f64,
    ) -> Result<Self> {
        let n = sigma.len();
        if n == 0 {
            return Err(Error::Config("at least one asset is required".into()));
        }
        if lambda.len() != n || omega.len() != n {
            return Err(Error::Config(format!(
                "field counts disagree: {} sigma, {} lambda, {} omega",
                n,
                lambda.len(),
                omega.len()
            )));
        }
        if rho.nrows() != n || rho.ncols() != n {
            return Err(Error::Config(format!(
                "rho must be {n}x{n}, got {}x{}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        Ok(MarketModel {
            n,
            sigma,
            lambda,
            a,
            b,
            omega,
            rho,
            rate,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rho(&self) -> &DMatrix<f64> {
        &self.rho
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn a(&self) -> &ScalarField {
        &self.a
    }

    pub fn b(&self) -> &ScalarField {
        &self.b
    }

    pub fn sigma_fields(&self) -> &[ScalarField] {
        &self.sigma
    }

    pub fn lambda_fields(&self) -> &[ScalarField] {
        &self.lambda
    }

    /// Each Sharpe ratio with its first two y-derivatives.
    pub fn sharpe_vector(&self, y: f64) -> Vec<FieldValue> {
        self.lambda.iter().map(|f| f.eval(y)).collect()
    }

    /// Each volatility with its first two y-derivatives.
    pub fn sigma_vector(&self, y: f64) -> Vec<FieldValue> {
        self.sigma.iter().map(|f| f.eval(y)).collect()
    }

    /// Derived drift μᵢ(y) = R + σᵢ(y) λᵢ(y).
    pub fn drift(&self, i: usize, y: f64) -> f64 {
        self.rate + self.sigma[i].value(y) * self.lambda[i].value(y)
    }

    /// Checks Σ_{j≠i} ρᵢⱼ σⱼ(y) < 2σᵢ(y) for every asset over a probe grid.
    pub fn check_diagonal_dominance(&self, y_grid: &[f64]) -> DominanceReport {
        assert!(!y_grid.is_empty(), "dominance check needs a non-empty grid");
        let mut worst_margin = f64::INFINITY;
        let mut worst_point = (0usize, y_grid[0]);
        for &y in y_grid {
            let sig: Vec<f64> = self.sigma.iter().map(|f| f.value(y)).collect();
            for i in 0..self.n {
                let off: f64 = (0..self.n)
                    .filter(|&j| j != i)
                    .map(|j| self.rho[(i, j)] * sig[j])
                    .sum();
                let margin = 2.0 * sig[i] - off;
                if margin < worst_margin {
                    worst_margin = margin;
                    worst_point = (i, y);
                }
            }
        }
        DominanceReport {
            ok: worst_margin > 0.0,
            worst_margin,
            worst_point,
        }
    }
}

/// Default probe grid used by [`validate_model`]: 1001 points on [−50, 50].
pub fn default_probe_grid() -> Vec<f64> {
    (0..=1000).map(|i| -50.0 + 0.1 * i as f64).collect()
}

/// Aggregated assumption check. Returns diagnostics on success, or the full
/// list of violated invariants.
pub fn validate_model(
    model: &MarketModel,
    utility: Option<&UtilityFamily>,
) -> Result<ModelDiagnostics> {
    let mut violations = Vec::new();
    let n = model.n;
    let rho = &model.rho;

    for i in 0..n {
        if (rho[(i, i)] - 1.0).abs() > 1e-14 {
            violations.push(ModelViolation::RhoDiagonalNotOne { i });
        }
        for j in (i + 1)..n {
            if (rho[(i, j)] - rho[(j, i)]).abs() > 1e-14 {
                violations.push(ModelViolation::RhoNotSymmetric { i, j });
            }
            if rho[(i, j)].abs() > 1.0 + 1e-14 {
                violations.push(ModelViolation::RhoEntryOutOfRange {
                    i,
                    j,
                    value: rho[(i, j)],
                });
            }
        }
    }
    if violations.is_empty() {
        let eig = SymmetricEigen::new(rho.clone());
        let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eigenvalue < -PSD_TOLERANCE {
            violations.push(ModelViolation::RhoNotPsd { min_eigenvalue });
        }
    }

    let mut sum_sq = 0.0;
    for (i, &w) in model.omega.iter().enumerate() {
        if w.abs() >= 1.0 {
            violations.push(ModelViolation::OmegaOutOfRange { i, value: w });
        }
        sum_sq += w * w;
    }
    if 1.0 - sum_sq < 0.0 {
        violations.push(ModelViolation::OmegaNormTooLarge { sum_sq });
    }

    for (name, field, must_be_positive) in model
        .sigma
        .iter()
        .enumerate()
        .map(|(i, f)| (format!("sigma_{i}"), f, true))
        .chain(
            model
                .lambda
                .iter()
                .enumerate()
                .map(|(i, f)| (format!("lambda_{i}"), f, false)),
        )
        .chain([
            ("a".to_string(), &model.a, true),
            ("b".to_string(), &model.b, false),
        ])
    {
        if !field.is_well_formed() {
            violations.push(ModelViolation::FieldMalformed { name });
        } else if must_be_positive && !field.is_strictly_positive() {
            violations.push(ModelViolation::FieldNotPositive { name });
        }
    }

    // Drift recovery probed on the grid; fields are bounded so a dense
    // finite grid stands in for a global check.
    let grid = default_probe_grid();
    'outer: for &y in &grid {
        for i in 0..n {
            if !model.drift(i, y).is_finite() {
                violations.push(ModelViolation::DriftNotFinite { i, y });
                break 'outer;
            }
        }
    }

    if let Some(UtilityFamily::PowerMixture { alpha, beta, .. }) = utility {
        if *alpha == 1.0 || *beta == 1.0 {
            violations.push(ModelViolation::UtilityUnitExponent);
        }
    }

    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }

    let omega_v = nalgebra::DVector::from_column_slice(&model.omega);
    let quad = (omega_v.transpose() * rho * &omega_v)[(0, 0)];
    Ok(ModelDiagnostics {
        factor_variance_multiplier: quad + 1.0 - sum_sq,
        dominance: model.check_diagonal_dominance(&grid),
    })
}
