use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("buffer too small: have {have}, need at least {need} (truncation bias would exceed tolerance)")]
    InsufficientBuffer { have: f64, need: f64 },

    #[error("operation requires a {expected} domain")]
    InvalidDomain { expected: &'static str },

    #[error("resource cap exceeded: {0}")]
    CapExceeded(String),

    #[error("intensity {lambda} is not above the calibrated critical intensity (need > {required})")]
    Subcritical { lambda: f64, required: f64 },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
