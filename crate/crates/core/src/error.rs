use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix that must be positive definite could not be factorized,
    /// even after the maximal diagonal jitter.
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("surrogate training failed: {0}")]
    TrainingFailure(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("malformed data in {context}: {message}")]
    Data { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
