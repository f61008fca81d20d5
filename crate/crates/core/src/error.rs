use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid action code {0}; expected 0..=4")]
    InvalidAction(u8),

    #[error("path loss requires a positive distance, got {0} m")]
    InvalidDistance(f64),

    #[error("UAV {uav} does not cover user {user}")]
    NotCovered { user: usize, uav: usize },

    #[error("resource block index {rb} outside 1..={n_rb}")]
    InvalidRb { rb: usize, n_rb: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("network architectures differ: {0:?} vs {1:?}")]
    ArchitectureMismatch(Vec<usize>, Vec<usize>),

    #[error("non-finite loss {loss}{context}")]
    NonFiniteLoss { loss: f64, context: String },

    #[error("oracle needs {required} association calls, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("episode plan violation: {0}")]
    PlanViolation(String),

    #[error("event script violation: {0}")]
    ScriptViolation(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint was written for config {found}, current config is {expected}")]
    ConfigHashMismatch { found: String, expected: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
