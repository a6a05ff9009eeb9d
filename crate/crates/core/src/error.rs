use thiserror::Error;

/// Errors raised by the abstraction and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("transition bound for region {region} -> target {target}, s = {s}: {source}")]
    Entry {
        region: usize,
        target: String,
        s: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> Error {
    Error::NumericFailure(msg.into())
}
