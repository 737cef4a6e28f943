use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not match data length {len}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },
}

/// Errors from the sparsity-pattern primitives and the compressed codec.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NxmError {
    #[error("invalid pattern {n}:{m} (need 0 < m <= n)")]
    InvalidPattern { n: usize, m: usize },
    #[error("input dimension {dim} is not divisible by group size {n}")]
    NotDivisible { dim: usize, n: usize },
    #[error("tensor violates the {n}:{m} constraint in group {group}")]
    NonCompliant { n: usize, m: usize, group: usize },
    #[error("mask mismatch: {0}")]
    MaskMismatch(String),
    #[error("malformed compressed payload: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nxm(#[from] NxmError),
    #[error("backward called before forward produced a scalar loss")]
    BackwardWithoutForward,
    #[error("{op}: {reason}")]
    Op { op: &'static str, reason: String },
    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn op(op: &'static str, reason: impl Into<String>) -> Self {
        Error::Op {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
