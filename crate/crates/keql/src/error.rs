//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by kernel evaluation, Gram assembly and the fitting
/// drivers.
#[derive(Debug, Error)]
pub enum Error {
    /// An input had the wrong length for the object it was used with.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A derivative of higher order than the implemented closed forms was
    /// requested.
    #[error("derivative order {order} per argument exceeds the supported maximum {max}")]
    UnsupportedDerivative { order: usize, max: usize },

    /// A Matérn kernel was asked for a derivative it does not possess.
    #[error(
        "Matérn kernel with nu={nu} is only {smoothness} times differentiable at coincidence; \
         requested total derivative order {requested}"
    )]
    InsufficientSmoothness {
        nu: f64,
        smoothness: usize,
        requested: usize,
    },

    /// A kernel or model specification failed validation.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// An operation received structurally invalid input.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A required collection was empty.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// Cholesky factorisation failed even after the jitter escalation.
    #[error("matrix not positive definite after {tries} jitter attempts (last jitter {last_jitter:e})")]
    NotPositiveDefinite { tries: usize, last_jitter: f64 },

    /// More inducing points were requested than candidates exist.
    #[error("requested {requested} inducing points from only {available} candidates")]
    TooManyInducing { requested: usize, available: usize },

    /// A dense linear-algebra routine failed.
    #[error("linear solve failed: {0}")]
    SolveFailed(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::SolveFailed(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
