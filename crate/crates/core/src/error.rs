use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid extents {height}x{width}: {reason}")]
    Extents {
        height: usize,
        width: usize,
        reason: &'static str,
    },

    #[error("extent mismatch: expected {expected:?}, got {got:?}")]
    ExtentMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid kernel: {0}")]
    Kernel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid MPI: {0}")]
    InvalidMpi(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("numerical drift: {0}")]
    Drift(String),

    #[error("malformed {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }
}
