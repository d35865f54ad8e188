use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {context}")]
    NonFiniteValue { context: String },

    #[error("parameter layouts differ: {0}")]
    LayoutMismatch(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("task set is empty")]
    EmptyTaskSet,

    #[error("tasks from different environment families")]
    MixedFamilies,

    #[error("unknown environment family `{0}`")]
    UnknownFamily(String),

    #[error("invalid action {action} for {env}")]
    InvalidAction { env: &'static str, action: String },

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("epoch {epoch} diverged: {source}")]
    EpochDiverged {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFiniteValue {
            context: context.into(),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
