use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{kind} index {index} out of range (len {len})")]
    Index {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    #[error("checkpoint field `{field}`: {message}")]
    Checkpoint { field: String, message: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite parameters")]
    Divergence { epoch: usize, batch: usize },

    #[error("user {user} has interacted with every item; no negative can be drawn")]
    NoNegative { user: usize },

    #[error("no evaluable users: {0}")]
    EmptyEvaluation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn checkpoint(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 for configuration and input validation, 3 for
    /// numeric failures, 4 for I/O and checkpoint storage.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::EmptyDataset(_)
            | Error::Config(_)
            | Error::Index { .. }
            | Error::NoNegative { .. }
            | Error::EmptyEvaluation(_) => 2,
            Error::Divergence { .. } => 3,
            Error::Checkpoint { .. } | Error::Io { .. } => 4,
        }
    }
}
