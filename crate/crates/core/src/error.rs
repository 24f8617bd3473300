use thiserror::Error;

/// Error vocabulary shared by the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller handed in arguments that violate an operation precondition.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A file did not match its declared layout (PGM header, PLDT magic, ...).
    #[error("format error: {0}")]
    Format(String),

    /// Input values outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An internal contract was violated (non-scalar loss, failed linearity
    /// probe, underdetermined fit, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// A statistical estimator could not produce a result.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Training produced a non-finite loss or gradient.
    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: String, step: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn estimation(msg: impl Into<String>) -> Self {
        Error::Estimation(msg.into())
    }
}
