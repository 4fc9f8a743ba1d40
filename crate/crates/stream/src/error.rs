use std::path::PathBuf;

use thiserror::Error;

use crate::sample::Modality;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("alignment gap on {modality}: nearest sample is {gap_ns} ns from the frame (window {window_ns} ns)")]
    AlignmentGap { modality: Modality, gap_ns: u64, window_ns: u64 },

    #[error("{path}:{line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("stream ended after {yielded} samples ({skipped} skipped): {reason}")]
    StreamEnded { yielded: u64, skipped: u64, reason: String },

    #[error(transparent)]
    Core(#[from] splatstream_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
