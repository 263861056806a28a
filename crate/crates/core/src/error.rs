use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the numerical routines and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("normalization mismatch: model fit on {model} embeddings, batch is {batch}")]
    NormalizationMismatch { model: &'static str, batch: &'static str },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Structured failures for the on-disk formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file while reading {0}")]
    Truncated(&'static str),

    #[error("malformed header: {0}")]
    Malformed(String),

    #[error("dimension overflow: {0}")]
    Overflow(String),

    #[error("record {index} has {found} columns, shard declares {expected}")]
    RecordDim {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("checkpoint has no sufficient statistics; it can score but cannot resume fitting")]
    MissingStats,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { expected, found }
    }
}
