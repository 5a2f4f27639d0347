use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("trajectory is not trackable: curvature {curvature:.4} 1/m exceeds limit {limit:.4} 1/m")]
    Untrackable { curvature: f64, limit: f64 },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("malformed data file {path}: {reason}")]
    DataFormat { path: PathBuf, reason: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("solver failure rate {rate:.4} exceeds the allowed {allowed:.4}")]
    SolverFailureRate { rate: f64, allowed: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerical pipeline, as opposed to bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::SolverFailureRate { .. } | Error::Untrackable { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
