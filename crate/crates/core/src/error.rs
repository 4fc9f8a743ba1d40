use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged at iteration {iteration}")]
    TrainingDiverged { iteration: u64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported camera model `{0}`")]
    UnsupportedModel(String),

    #[error("insufficient overlap: {0} associated pose pairs, at least 3 required")]
    InsufficientOverlap(usize),

    #[error("malformed model file: {0}")]
    Format(String),

    #[error("non-finite parameters at gaussian indices {0:?}")]
    NonFinite(Vec<usize>),

    #[error("PLY schema: missing required property `{0}`")]
    MissingProperty(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid_param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
