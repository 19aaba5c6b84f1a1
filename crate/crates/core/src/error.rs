use thiserror::Error;

/// Errors raised by construction, coding, protocol and harness operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter `{name}` = {value} is out of range ({expected})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("message bit at frozen position {index} does not match the frozen value")]
    FrozenMismatch { index: usize },

    #[error("operation requires a {expected} channel")]
    WrongChannel { expected: &'static str },

    #[error("invalid index sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid encoding: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn out_of_range(name: &'static str, value: f64, expected: &'static str) -> Error {
    Error::OutOfRange {
        name,
        value,
        expected,
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}
