use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("parameter `{0}` is missing from the store")]
    MissingParam(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("gradient for `{0}` is not finite")]
    NonFiniteGradient(String),
    #[error("update for `{0}` is not finite")]
    NonFiniteUpdate(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid setting: {0}")]
    Setting(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("evaluation: {0}")]
    Eval(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers themselves (NaN/Inf) rather
    /// than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Autodiff(AutodiffError::NonFinite { .. }) | Error::NonFiniteGradient(_) | Error::NonFiniteUpdate(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
