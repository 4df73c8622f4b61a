use std::path::PathBuf;

use thiserror::Error;

use crate::types::MsgId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate message: {0}")]
    DuplicateMessage(String),

    #[error("unknown message id {id} (line {line}, position {position})")]
    UnknownId {
        id: i64,
        line: usize,
        position: usize,
    },

    #[error("invalid flow `{name}`: {msg}")]
    InvalidFlow { name: String, msg: String },

    #[error("no path from msg_{start} to msg_{end}")]
    NoPath { start: MsgId, end: MsgId },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("loss diverged at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("msg_{0} does not occur in the traces")]
    NoOccurrence(MsgId),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file version mismatch: {0}")]
    VersionMismatch(String),

    #[error("corrupt model file: {0}")]
    CorruptFile(String),

    #[error("flow set accepts every corruption; cannot build a negative trace")]
    InfeasibleCorruption,

    #[error("search budget of {budget} nodes exceeded (best rate so far {best_rate:.4}, lower bound)")]
    BudgetExceeded { budget: u64, best_rate: f64 },

    #[error("mined flow violates flow invariants: {0}")]
    InvariantViolation(String),

    #[error("only {support:.3} of the slices holding msg_{start} finish with msg_{end}")]
    Unsupported { start: MsgId, end: MsgId, support: f64 },

    #[error("no truth flow for mined pair (msg_{start}, msg_{end})")]
    UnmatchedPair { start: MsgId, end: MsgId },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
