use thiserror::Error;

#[derive(Debug, Error)]
pub enum LkgpError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numerical breakdown: {0}")]
    Breakdown(String),
    #[error("Lanczos recurrence broke down at step {step}: {reason}")]
    LanczosBreakdown { step: usize, reason: String },
    #[error("Cholesky factorization failed after jitter escalation (last jitter {jitter:e})")]
    Cholesky { jitter: f64 },
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error("dense materialization refused: {size} observed entries exceed the cap of {cap}")]
    DenseCapExceeded { size: usize, cap: usize },
    #[error("{0}")]
    Data(String),
    #[error("model file format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("model file schema violation: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LkgpError>;

impl LkgpError {
    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        LkgpError::DimensionMismatch { context, expected, got }
    }
}
