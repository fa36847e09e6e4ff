use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Stream(#[from] io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no interactions survive the {k}-core filter")]
    EmptyAfterFilter { k: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("code length mismatch: {left} words vs {right} words")]
    LengthMismatch { left: usize, right: usize },

    #[error("{what} id {id} out of range (< {bound})")]
    OutOfRange {
        what: &'static str,
        id: usize,
        bound: usize,
    },

    #[error("expected a {expected} model, got {actual}")]
    KindMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("user {user} has interacted with every item; no negative can be sampled")]
    NoNegative { user: u32 },

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("bad file format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures raised by the numeric core (as opposed to bad
    /// input or configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::Diverged { .. } | Error::NoNegative { .. }
        )
    }
}
