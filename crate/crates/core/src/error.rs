use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {what} at {location}")]
    NonFinite { what: &'static str, location: String },

    #[error("index {index} out of range for {len} patches")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("genome length mismatch: expected {expected} parameters, got {actual}")]
    GenomeLength { expected: usize, actual: usize },

    #[error("genome layout mismatch: expected hash {expected:#018x}, found {found:#018x}")]
    LayoutMismatch { expected: u64, found: u64 },

    #[error("no candidate has been evaluated yet")]
    EmptyArchive,

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            what,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
