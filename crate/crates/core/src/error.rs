use thiserror::Error;

/// Errors raised by the EDM completion library.
#[derive(Debug, Error)]
pub enum EdmError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is numerically singular: {0}")]
    Singular(String),

    #[error("no observed pairs")]
    EmptyObservations,

    #[error("reference matrix has zero Frobenius norm")]
    ZeroReference,

    #[error("invalid fixture: {0}")]
    InvalidFixture(String),
}

pub type Result<T> = std::result::Result<T, EdmError>;
