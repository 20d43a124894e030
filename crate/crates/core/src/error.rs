use thiserror::Error;

/// Errors raised across the library. Each variant maps onto one of the CLI
/// exit codes (see [`TsgError::exit_code`]).
#[derive(Debug, Error)]
pub enum TsgError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("symmetry validation failed: {0}")]
    Symmetry(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl TsgError {
    pub fn exit_code(&self) -> i32 {
        match self {
            TsgError::Numerical(_) => 3,
            TsgError::Symmetry(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, TsgError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(TsgError::InvalidInput(msg.into()))
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TsgError::Dimension(msg.into()))
}
