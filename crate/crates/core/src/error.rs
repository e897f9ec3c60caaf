use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("data inconsistency: {0}")]
    DataInconsistency(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The optimizer produced a non-finite objective. `trace` holds the
    /// accepted `(iteration, objective)` pairs recorded before the failure.
    #[error("optimizer diverged: {message}")]
    Divergence {
        message: String,
        trace: Vec<(usize, f64)>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
}
