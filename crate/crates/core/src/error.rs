use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0} contains no interactions")]
    Empty(PathBuf),
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("user {0} has no candidate items")]
    DegenerateUser(String),
    #[error("probability {value} at index {index} is outside [0, 1]")]
    ProbabilityDomain { index: usize, value: f64 },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("training loss became non-finite at epoch {epoch} (last finite loss {last_finite})")]
    NonFiniteLoss { epoch: usize, last_finite: f64 },
    #[error("exact mode supports at most {cap} candidates, user has {n}; use approx mode")]
    ExactCapExceeded { n: usize, cap: usize },
    #[error("hit count {hits} exceeds total relevant count {total}")]
    InconsistentLabels { hits: usize, total: usize },
    #[error("allocation infeasible: budget {budget} below {domains} domains with zero sizes disallowed")]
    Infeasible { budget: usize, domains: usize },
    #[error("brute-force search space of {0} combinations is too large")]
    SearchSpaceTooLarge(u128),
    #[error("no users are evaluable")]
    NoEvaluableUsers,
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
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

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
