use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid geometry in {op}: {msg}")]
    Geometry { op: &'static str, msg: String },

    #[error("{op} expects a rank-{expected} tensor, got shape {got:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },

    #[error("batch normalization in train mode needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("input is not connected to the differentiated output")]
    Disconnected,

    #[error("tensor is not tracked by the autograd graph")]
    NotTracked,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("conditioning mode violation: {0}")]
    Mode(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("cannot decode {path}: {msg}")]
    Decode { path: PathBuf, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn geometry(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Geometry {
            op,
            msg: msg.into(),
        }
    }
}
