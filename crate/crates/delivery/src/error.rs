use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("resync required: client at revision {client}, update starts at {update_from}")]
    ResyncRequired { client: u64, update_from: u64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("malformed update: {0}")]
    Format(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bad control message `{text}`: {reason}")]
    Control { text: String, reason: String },

    #[error("timed out waiting for {0}")]
    Timeout(String),

    #[error(transparent)]
    WebSocket(#[from] Box<tungstenite::Error>),

    #[error(transparent)]
    Core(#[from] splatstream_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<tungstenite::Error> for Error {
    fn from(e: tungstenite::Error) -> Self {
        Error::WebSocket(Box::new(e))
    }
}
