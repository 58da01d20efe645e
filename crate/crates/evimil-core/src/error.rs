//! Crate-wide error type. The CLI maps these variants onto exit codes, so
//! keep the categories coarse: configuration, data, numeric/training, IO.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite loss at epoch {epoch}, bag {bag}")]
    NonFiniteLoss { epoch: usize, bag: usize },
    #[error("numerical domain violation: {0}")]
    Numeric(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Error {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
