//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    CgDidNotConverge { iterations: usize, residual: f64 },
    #[error("variance strategy {strategy} is incompatible with operator {operator}")]
    IncompatibleStrategy { strategy: String, operator: String },
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("degenerate gradient statistics: {0}")]
    DegenerateGradients(String),
    #[error("image i/o: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EpError>;
