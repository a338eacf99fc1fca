//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A binary or text input file violates its format contract.
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    /// Text parse failure with a 1-based line number.
    #[error("parse error at {path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    /// A domain-type invariant would be violated.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// A caller broke an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Rejection sampling could not place an object within the attempt cap.
    #[error("placement capacity exceeded: {0}")]
    Capacity(String),

    /// Graph evaluation hit a domain error (division by zero, log of a
    /// non-positive value, ...) or an unbound input; identifies the node.
    #[error("graph evaluation error at node {node}: {reason}")]
    Eval { node: u32, reason: String },

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}, scene {scene_id}: {reason}")]
    Divergence {
        epoch: usize,
        scene_id: String,
        reason: String,
    },

    /// AP is undefined when there are no ground-truth boxes to recall.
    #[error("average precision undefined: no ground-truth boxes{0}")]
    UndefinedAp(String),

    /// Configuration is structurally valid but semantically wrong.
    #[error("invalid config: {0}")]
    Config(String),

    /// Two directory listings that must describe the same scenes do not.
    #[error("mismatched scene sets: only in first: {only_first:?}; only in second: {only_second:?}")]
    SceneSetMismatch {
        only_first: Vec<String>,
        only_second: Vec<String>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
