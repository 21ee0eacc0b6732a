use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("unknown id {0}")]
    UnknownId(usize),

    #[error("{path}:{line}: malformed JSON: {source}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("no usable pairs in {0}")]
    NoUsablePairs(PathBuf),

    #[error("corpus too small for distractors: need {needed} pairs, have {have}")]
    TooSmallForDistractors { needed: usize, have: usize },

    #[error("no room for summary in a row of length {max_len}")]
    NoRoomForSummary { max_len: usize },

    #[error("no LM targets")]
    NoLmTargets,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("embedding backend failed on sentence {index}: {reason}")]
    Embedding { index: usize, reason: String },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Process exit code: 2 usage, 3 data, 4 numeric abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownStrategy { .. } | Error::OutOfRange(_) => 2,
            Error::NonFiniteLoss { .. } => 4,
            _ => 3,
        }
    }
}
