use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the lab. Variants are grouped by the exit code
/// the CLI maps them to (see [`NilError::exit_code`]).
#[derive(Debug, Error)]
pub enum NilError {
    #[error("elements belong to different group models ({0} vs {1})")]
    ModelMismatch(String, String),

    #[error("integer overflow in group arithmetic")]
    Overflow,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("resource budget exceeded: {what} (budget {budget})")]
    Resource { what: String, budget: usize },

    #[error("certification failure: {0}")]
    Certification(String),

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("norm is not conjugation invariant: {0}")]
    Refusal(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl NilError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NilError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code. Refusal, certification, resource and integrity
    /// failures each get their own code so scripts can tell them apart.
    pub fn exit_code(&self) -> i32 {
        match self {
            NilError::Refusal(_) => 2,
            NilError::Certification(_) => 3,
            NilError::Resource { .. } => 4,
            NilError::Integrity(_) => 5,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, NilError>;
