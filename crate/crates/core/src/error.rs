use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("matrix is not symmetric: |C[{row},{col}] - C[{col},{row}]| = {gap:e} exceeds tolerance")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("mean and trigger are (numerically) collinear: Gram determinant {det:e}")]
    DegenerateGram { det: f64 },

    #[error("fixed point has not converged (residual {residual:e} after {iterations} iterations)")]
    NotConverged { residual: f64, iterations: usize },

    #[error("not enough negative samples to poison: need {needed}, have {available}")]
    InsufficientNegatives { needed: usize, available: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
