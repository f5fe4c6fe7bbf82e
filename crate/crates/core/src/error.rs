use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {file}: {reason}")]
    Format { file: String, reason: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("sync error: {0}")]
    Sync(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(file: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end: 1 for
    /// configuration problems, 2 for everything data- or format-related.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }

    /// Prefixes the message with extra context (sequence name, frame index, ...).
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Shape(m) => Error::Shape(format!("{ctx}: {m}")),
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Format { file, reason } => Error::Format {
                file,
                reason: format!("{ctx}: {reason}"),
            },
            Error::Training(m) => Error::Training(format!("{ctx}: {m}")),
            Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("{ctx}: {m}")),
            Error::Sync(m) => Error::Sync(format!("{ctx}: {m}")),
            e @ Error::Io { .. } => e,
        }
    }
}
