use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum DespError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("sampler diverged at step {step}")]
    SamplerDivergence { step: usize },

    #[error("sampler diverged at step {step} while sampling negatives for batch {batch}")]
    TrainingDivergence { batch: usize, step: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("undefined rotation: {0}")]
    UndefinedAngle(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DespError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(DespError::Dimension(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(DespError::Contract(msg.into()))
}
