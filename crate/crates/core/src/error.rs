use thiserror::Error;

use crate::{Energy, GridId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid ADL action {action:#b}: job {job} is not remaining")]
    InvalidAdlAction { action: u32, job: usize },

    #[error("infeasible ADL action: needs {required} units, only {available} on hand")]
    InfeasibleAction { required: Energy, available: Energy },

    #[error("order from grid {grid} rejected: {reason}")]
    OrderRejected { grid: GridId, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("action mask is empty")]
    EmptyMask,

    #[error("replay buffer not ready: holds {len}, need {needed}")]
    NotReady { len: usize, needed: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("constraint violation at grid {grid}: {detail}")]
    ConstraintViolation { grid: GridId, detail: String },

    #[error("invalid config: {field}: {message}")]
    Config { field: String, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
