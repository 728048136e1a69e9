//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Invalid configuration or construction arguments.
    Config(String),
    /// Malformed, inconsistent, or empty input data.
    Data(String),
    /// API misuse: out-of-range indices, empty batches, calls out of order.
    Usage(String),
    /// Non-finite values where finite arithmetic is required.
    Numeric(String),
    /// Training diverged or failed to make progress.
    Training(String),
    /// A rank statistic is undefined because one input has no rank variance.
    NoVariance,
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Training(msg) => write!(f, "training error: {msg}"),
            Error::NoVariance => write!(f, "statistic undefined: zero rank variance"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
