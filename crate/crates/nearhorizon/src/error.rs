//! Crate-wide error type.

use thiserror::Error;

use crate::market::ModelViolation;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A division by a vanishing second derivative or zero matrix diagonal.
    #[error("singularity: {0}")]
    Singular(String),

    /// Jacobi iteration refused: convergence is only guaranteed for
    /// strictly diagonally dominant systems.
    #[error("matrix is not strictly diagonally dominant")]
    NotDiagonallyDominant,

    /// Jacobi iteration ran out of iterations.
    #[error("iteration limit {max_iter} exceeded, last residual {residual:.3e}")]
    MaxIterations { max_iter: usize, residual: f64 },

    /// Model assumptions violated; each entry names the broken invariant.
    #[error("model validation failed: {}", format_violations(.0))]
    Validation(Vec<ModelViolation>),

    /// Simulation request exceeds the configured work budget.
    #[error("simulation budget exceeded: {requested} path-steps requested, budget {budget}")]
    BudgetExceeded { requested: u64, budget: u64 },

    /// Spatial grid cannot resolve the derivative stencils.
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    /// Configuration file could not be read or parsed.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(violations: &[ModelViolation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
