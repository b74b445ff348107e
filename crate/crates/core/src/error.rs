use thiserror::Error;

/// Errors raised while configuring or running a scenario.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("state space too large: {pairs} state-action pairs exceeds cap {cap}")]
    StateCap { pairs: usize, cap: usize },

    #[error("cross-check failed: {0}")]
    Check(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
