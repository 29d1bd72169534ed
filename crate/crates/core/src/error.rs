use thiserror::Error;

/// Errors raised by state construction, measurement simulation and dataset IO.
#[derive(Debug, Error)]
pub enum QstError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = QstError> = std::result::Result<T, E>;
