use thiserror::Error;

/// Errors raised by the estimators, spectral kernels and simulators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClarError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, ClarError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(ClarError::InvalidInput(msg.into()))
}
