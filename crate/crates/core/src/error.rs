use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("cosine undefined for a zero vector")]
    ZeroVector,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("vocabulary is empty")]
    EmptyVocabulary,

    #[error("non-finite dot product while training token '{token}'")]
    NonFinite { token: String },

    #[error("cold start failed for '{item}': {reason}")]
    ColdStart { item: String, reason: String },

    #[error("protocol error in batch {batch_id}: {msg}")]
    Protocol { batch_id: u64, msg: String },

    #[error("shard failure: {msg} (last completed epoch: {last_completed_epoch:?}, checkpoint: {checkpoint:?})")]
    ShardFailure {
        msg: String,
        last_completed_epoch: Option<usize>,
        checkpoint: Option<PathBuf>,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
