use std::path::PathBuf;

use thiserror::Error;

use crate::data::StainId;

pub type Result<T, E = CsclError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CsclError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },

    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("duplicate patch coordinate ({row}, {col})")]
    DuplicateCoord { row: u32, col: u32 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("case {case}: stain {stain}: {reason}")]
    Alignment {
        case: String,
        stain: StainId,
        reason: String,
    },

    #[error("case {case}: {reason}")]
    Case { case: String, reason: String },

    #[error("{path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition failed: {0}")]
    Precondition(String),
}

impl CsclError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CsclError::InvalidArgument(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        CsclError::Precondition(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        CsclError::Shape(msg.into())
    }
}
