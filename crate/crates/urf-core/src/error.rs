use thiserror::Error;

/// Error type shared across the library.
#[derive(Debug, Error)]
pub enum UrfError {
    /// A configuration or argument value is out of its valid range.
    #[error("invalid value for `{field}`: {reason}")]
    InvalidValue { field: String, reason: String },

    /// Vector/matrix dimensions do not agree.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// A numerical routine failed (non-finite values, factorization failure, divergence).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Requested PCA dimension exceeds the achievable rank.
    #[error("rank deficiency: requested {requested} components but achieved rank is {achieved}")]
    RankDeficient { requested: usize, achieved: usize },

    /// A rollout produced a non-finite or exploding state.
    #[error("rollout diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, UrfError>;

impl UrfError {
    pub fn invalid(field: &str, reason: impl Into<String>) -> Self {
        UrfError::InvalidValue {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub fn dims(context: &str, expected: usize, actual: usize) -> Self {
        UrfError::DimensionMismatch {
            context: context.to_string(),
            expected,
            actual,
        }
    }
}
