use std::io;

use thiserror::Error;

/// Errors produced anywhere in the core crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("could not place vehicles without overlap: {0}")]
    Placement(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate vector: zero norm")]
    DegenerateVector,
    #[error("missing assets: {0}")]
    MissingAssets(String),
    #[error("invalid asset file: {0}")]
    Asset(String),
    #[error("invalid weight file: {0}")]
    Weights(String),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("training aborted at step {step}: {source}")]
    Training {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::Training { .. } => e,
            e => Error::Training {
                step,
                source: Box::new(e),
            },
        }
    }
}
