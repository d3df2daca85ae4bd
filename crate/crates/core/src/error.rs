use thiserror::Error;

#[derive(Debug, Error)]
pub enum FriError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("kernel evaluation failed: {0}")]
    Evaluation(String),

    #[error("exponential reproduction failed: residual {residual:.3e} exceeds tolerance {tolerance:.1e}")]
    ReproductionFailure { residual: f64, tolerance: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate roots: {0}")]
    DegenerateRoots(String),

    #[error("trivial nullspace: the annihilation matrix is zero")]
    TrivialNullspace,

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FriError {
    /// Process exit code used by the `fri` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            FriError::Config(_) | FriError::Json(_) | FriError::InvalidArgument(_) => 2,
            FriError::Io(_) | FriError::Csv(_) | FriError::Checkpoint(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, FriError>;
