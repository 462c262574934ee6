use thiserror::Error;

pub type Result<T> = std::result::Result<T, GcrfError>;

#[derive(Debug, Error)]
pub enum GcrfError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
