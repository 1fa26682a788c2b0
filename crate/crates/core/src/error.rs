use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    /// A binary file (embedding bundle or index) failed to decode.
    #[error("{what} at byte offset {offset}")]
    Format { what: String, offset: u64 },

    #[error("layout violation: {0}")]
    Layout(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("page {page_id}: {reason}")]
    Hygiene { page_id: String, reason: String },

    #[error("pooling: {0}")]
    Pooling(String),

    #[error("duplicate page id `{0}`")]
    DuplicateId(String),

    #[error("record `{page_id}` is missing named vector `{name}`")]
    MissingVector { page_id: String, name: String },

    #[error("unknown vector name `{0}`")]
    UnknownVector(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("arithmetic overflow computing {0}")]
    Overflow(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid image: {0}")]
    Image(String),
}

impl Error {
    pub fn format(what: impl Into<String>, offset: u64) -> Self {
        Error::Format {
            what: what.into(),
            offset,
        }
    }
}
