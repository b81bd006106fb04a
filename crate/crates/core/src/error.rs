use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("mode set mismatch: {0}")]
    ModeMismatch(String),
    #[error("parameter outside admissible window: {0}")]
    Window(String),
    #[error("wrong model kind: {0}")]
    WrongModel(String),
    #[error("series did not converge within {0} terms")]
    SeriesDiverged(usize),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
