use thiserror::Error;

/// Errors of the experiment harness.
#[derive(Debug, Error)]
pub enum BenchError {
    /// Malformed or inconsistent experiment specification.
    #[error("spec error: {0}")]
    Spec(String),

    /// Too many solves failed.
    #[error("{failures} of {solves} solves failed, above the failure cap {cap}")]
    FailureCap { failures: usize, solves: usize, cap: f64 },

    #[error(transparent)]
    Core(#[from] qpt_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    /// Process exit code: 2 for spec errors, 3 for the failure cap, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Spec(_) => 2,
            BenchError::FailureCap { .. } => 3,
            _ => 1,
        }
    }
}

pub(crate) fn spec_error(msg: impl Into<String>) -> BenchError {
    BenchError::Spec(msg.into())
}
