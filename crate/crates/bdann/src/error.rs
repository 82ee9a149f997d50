use thiserror::Error;

/// Unified error type for the whole library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// Training produced a non-finite loss. Carries the per-epoch loss trace
    /// up to the failure so callers can inspect how it diverged.
    #[error("training diverged at epoch {epoch} ({context})")]
    Diverged {
        epoch: usize,
        context: String,
        loss_history: Vec<f64>,
    },

    #[error("base model mismatch: {0}")]
    BaseMismatch(String),

    #[error("row {line}: {msg}")]
    CsvRow { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
