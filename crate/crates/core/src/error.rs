use std::fmt;
use std::path::PathBuf;

use crate::corpus::PostId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A failure tied to one line of a line-delimited input.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("post {0} not found")]
    PostNotFound(PostId),

    #[error("duplicate post id {0}")]
    DuplicatePost(PostId),

    #[error("{} bad line(s); first: {}", .0.len(), .0[0])]
    Lines(Vec<LineError>),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("corrupt {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("engine not initialized: {0}")]
    Uninitialized(&'static str),

    #[error("unknown embedder {0:?}")]
    UnknownEmbedder(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("nearline indexing of post {post_id} failed: {reason}")]
    Nearline { post_id: PostId, reason: String },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
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
