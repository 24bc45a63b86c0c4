//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClawError {
    /// Bad configuration: unknown keys, invalid sizes, mismatched widths.
    #[error("config error: {0}")]
    Config(String),

    /// Misuse of an API at runtime (e.g. backward on a consumed graph).
    #[error("usage error: {0}")]
    Usage(String),

    /// Dataset or file-format problems.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite losses, gradients or diverged numerics.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ClawError>;

impl ClawError {
    /// Exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClawError::Config(_) | ClawError::Usage(_) => 1,
            ClawError::Data(_) | ClawError::Io(_) => 2,
            ClawError::Numerical(_) => 3,
        }
    }
}
