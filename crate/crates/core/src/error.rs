//! Error types shared across the crate.

use std::path::PathBuf;

/// Errors surfaced by fallible library operations.
///
/// Tensor primitives treat shape misuse as a programming error and panic with
/// a message naming the offending shapes; everything that can fail on user
/// input (configs, files, datasets, training) returns `Result<_, Error>`.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dim {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("container format: {0}")]
    Container(#[from] ContainerError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Distinct failure codes for the binary container formats
/// (datasets, checkpoints, atlas matrices).
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ContainerError {
    #[error("bad magic: expected {expected}, found {found}")]
    Magic { expected: String, found: String },

    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: u64, found: u64 },

    #[error("truncated payload: needed {needed} bytes, had {available}")]
    Truncated { needed: u64, available: u64 },

    #[error("checksum mismatch: header {declared:#018x}, payload {computed:#018x}")]
    Checksum { declared: u64, computed: u64 },

    #[error("header/payload inconsistency: {0}")]
    Consistency(String),

    #[error("malformed header: {0}")]
    Header(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
