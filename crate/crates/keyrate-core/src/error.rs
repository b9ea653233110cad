//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by construction, validation and numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not Hermitian within tolerance: {0}")]
    NotHermitian(String),
    #[error("matrix has non-finite entries: {0}")]
    NonFinite(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("matrix is significantly indefinite: {0}")]
    Indefinite(String),
    #[error("eigendecomposition did not converge")]
    EigenFailure,
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("facial reduction failed: {0}")]
    FacialReduction(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
