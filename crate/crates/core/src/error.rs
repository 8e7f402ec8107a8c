use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {dim} mismatch (expected {expected}, got {got})")]
    Shape {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: expected a rank-{rank} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        rank: usize,
        shape: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-binary mask value {value} at flat index {index}")]
    NonBinary { index: usize, value: f32 },

    #[error("non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("missing activations for epoch {epoch}, layer {layer}")]
    MissingLayer { epoch: usize, layer: usize },

    #[error("{}: {msg}", path.display())]
    File { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::File {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
