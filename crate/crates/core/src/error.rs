use thiserror::Error;

/// Errors raised by the regression engine and its harness.
#[derive(Debug, Error)]
pub enum GpError {
    /// Cholesky factorization of an n×n covariance matrix hit a non-positive pivot.
    #[error("covariance matrix of size {n} is numerically singular")]
    SingularCovariance { n: usize },

    /// A small (m×m) matrix that should be symmetric positive-definite is not.
    #[error("{0} is not symmetric positive-definite")]
    NotPositiveDefinite(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("trace is empty")]
    EmptyTrace,

    #[error("no valid starting covariance found after {0} attempts")]
    Initialization(usize),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GpError>;
