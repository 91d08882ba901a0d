use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("invalid patch geometry: {0}")]
    Geometry(String),

    #[error("coverage error: pixel ({y}, {x}) is not covered by any patch")]
    Coverage { y: usize, x: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint mismatch for tensor `{name}`: {detail}")]
    Checkpoint { name: String, detail: String },

    #[error("clip `{clip}`: {detail}")]
    Dataset { clip: String, detail: String },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit status: 1 verification or numeric failure, 2 bad
    /// configuration, 3 unreadable or malformed files.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Geometry(_) | Error::Coverage { .. } => 2,
            Error::Io(_) | Error::Format(_) | Error::Checkpoint { .. } | Error::Dataset { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn dataset(clip: impl Into<String>, detail: impl ToString) -> Self {
        Error::Dataset {
            clip: clip.into(),
            detail: detail.to_string(),
        }
    }
}
