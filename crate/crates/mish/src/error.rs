use std::io;

use thiserror::Error;

/// Errors for fallible operations (I/O, file formats, corpus ingestion).
///
/// Contract violations on pure in-memory operations (length mismatches,
/// out-of-range indices) are panics, not `Err` values; see the crate docs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("malformed corpus row at line {line}: {msg}")]
    Corpus { line: usize, msg: String },

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
