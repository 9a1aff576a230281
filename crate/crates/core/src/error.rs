use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric input error: {0}")]
    NumericInput(String),

    /// An invalid block, mixer or parameter configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported op: {0}")]
    UnsupportedOp(String),

    /// A fused-sequence index that is no longer a bijection onto its rows.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("insufficient data: need at least {needed} distinct points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("training diverged at step {step}: loss is {loss}")]
    TrainingFailure { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
