use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("missing parameter `{0}`")]
    MissingParameter(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("log-SNR {lambda} outside [{min}, {max}]")]
    OutOfRange { lambda: f64, min: f64, max: f64 },

    #[error("degenerate process at log-SNR {0}: alpha or sigma vanishes")]
    Degenerate(f64),

    #[error("weighting `{name}` is not monotonic: w({lo}) = {w_lo} < w({hi}) = {w_hi}")]
    NotMonotonic { name: String, lo: f64, hi: f64, w_lo: f64, w_hi: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
