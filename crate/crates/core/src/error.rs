use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate event ({source_label}, {destination_label}, t={timestamp}) at line {line}")]
    DuplicateEvent {
        source_label: String,
        destination_label: String,
        timestamp: u64,
        line: u64,
    },

    #[error("invalid value: {0}")]
    Value(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("mask error: {0}")]
    Mask(String),

    #[error("degenerate range: all training weights equal {0}")]
    DegenerateRange(f64),

    #[error("logarithm domain error: weight {0} is not positive")]
    LogDomain(f64),

    #[error("no outgoing weight sum for node {node} at snapshot {snapshot}")]
    MissingDegreeSum { node: u32, snapshot: u32 },

    #[error("negative sampling exhausted at snapshot {snapshot}: requested {requested}, only {available} absent pairs")]
    Exhausted {
        snapshot: u32,
        requested: usize,
        available: usize,
    },

    #[error("scope error: {0}")]
    Scope(String),

    #[error("regroup error: cannot split {len} entries into {groups} groups")]
    Regroup { len: usize, groups: usize },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("length mismatch: {left} predictions vs {right} targets")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("inconsistent metric keys across seeds: {0}")]
    InconsistentKeys(String),

    #[error("task mismatch: {0}")]
    TaskMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

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
}
