use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented range or is unknown.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A client upload is inconsistent with the rest of the round.
    #[error("protocol error (client {client_id}): {reason}")]
    Protocol { client_id: u32, reason: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// A binary or text artifact failed to parse.
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// True for errors a user fixes by editing configuration or arguments.
    pub fn is_configuration(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Unsupported(_))
    }
}
