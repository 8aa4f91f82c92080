use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP `{name}`: {violations:?}")]
    InvalidMdp { name: String, violations: Vec<String> },

    #[error("expected an action node, got {0}")]
    NotAnActionNode(String),

    #[error("node index {index} out of bounds (len {len})")]
    NodeOutOfBounds { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("empty set passed to {0}")]
    EmptySet(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("action sets of states `{left}` and `{right}` are not aligned")]
    MisalignedActions { left: String, right: String },

    #[error("transfer method `{0}` requires an action distance matrix")]
    MissingActionDistances(String),

    #[error("goal unreachable from start")]
    Unreachable,

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}
