use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("{path}: unsupported bit depth {found} (expected 8)")]
    UnsupportedBitDepth { path: PathBuf, found: u16 },

    #[error("{path}: unsupported channel count {found} (expected 1 or 3)")]
    UnsupportedChannels { path: PathBuf, found: u8 },

    #[error("{path}: malformed JSON at line {line}, column {column}: {reason}")]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        reason: String,
    },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: String, right: String },

    #[error("invalid {what}: {reason}")]
    InvalidArgument { what: &'static str, reason: String },

    #[error("annotation references unknown image id {0}")]
    UnknownImageId(i64),

    #[error("imaginary residue {residue:e} exceeds tolerance for an unmodified spectrum")]
    ImaginaryResidue { residue: f64 },

    #[error("pixel ({x}, {y}) is not covered by any tile")]
    Uncovered { x: usize, y: usize },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn mismatch(left: impl Into<String>, right: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            left: left.into(),
            right: right.into(),
        }
    }

    /// `true` for errors caused by bad inputs rather than by the environment
    /// or by a broken internal invariant.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::ImaginaryResidue { .. } | Error::Uncovered { .. } => false,
            _ => true,
        }
    }
}
