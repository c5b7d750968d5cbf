use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("{0}: non-finite value")]
    NonFinite(&'static str),
    #[error("loss node is not a scalar (shape {0:?})")]
    NonScalarLoss(Vec<usize>),
    #[error("graph contains a cycle at node {0}")]
    Cycle(usize),
    #[error("backward already run on this graph")]
    BackwardTwice,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("source and target files are misaligned at line {0}")]
    Misaligned(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
