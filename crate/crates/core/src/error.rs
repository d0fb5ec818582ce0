use thiserror::Error;

/// Errors produced by the engine.
///
/// `Usage` and `Parse` describe bad inputs and map to exit code 2 in the CLI;
/// everything else is a runtime failure (exit code 3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error("domain: {0}")]
    Domain(String),
    #[error("parse: row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("numeric: step {step}: {msg}")]
    Numeric { step: usize, msg: String },
    #[error("format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by invalid input or configuration.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_) | Error::Parse { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::Domain(_) => "domain",
            Error::Parse { .. } => "parse",
            Error::Numeric { .. } => "numeric",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
