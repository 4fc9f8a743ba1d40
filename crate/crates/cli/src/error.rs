use std::io::ErrorKind;

use thiserror::Error;

/// Exit status 2: the inputs or configuration are wrong.
pub const EXIT_INPUT: i32 = 2;
/// Exit status 1: the run itself failed.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
    #[error("interrupted by signal{0}")]
    Interrupted(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Runtime(_) | CliError::Interrupted(_) => EXIT_RUNTIME,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Runtime(_) => "runtime",
            CliError::Interrupted(_) => "interrupted",
        }
    }

    /// `error kind=<input|runtime|interrupted> message=<text>`, always one line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error kind={} message={msg}", self.kind())
    }
}

impl From<splatstream_core::Error> for CliError {
    fn from(e: splatstream_core::Error) -> Self {
        use splatstream_core::Error as E;
        match &e {
            E::InvalidParameter(_)
            | E::InvalidInput(_)
            | E::Parse { .. }
            | E::UnsupportedModel(_)
            | E::InsufficientOverlap(_)
            | E::Format(_)
            | E::NonFinite(_)
            | E::MissingProperty(_)
            | E::MissingFile(_)
            | E::Image { .. } => CliError::Input(e.to_string()),
            E::Io(io) if io.kind() == ErrorKind::NotFound => CliError::Input(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<splatstream_stream::Error> for CliError {
    fn from(e: splatstream_stream::Error) -> Self {
        use splatstream_stream::Error as E;
        match e {
            E::Core(c) => c.into(),
            E::InvalidParameter(_) | E::Manifest { .. } | E::MissingFile(_) => CliError::Input(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<splatstream_delivery::Error> for CliError {
    fn from(e: splatstream_delivery::Error) -> Self {
        use splatstream_delivery::Error as E;
        match e {
            E::Core(c) => c.into(),
            E::InvalidParameter(_) => CliError::Input(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
