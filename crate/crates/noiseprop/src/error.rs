use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("degenerate channel {channel}: zero variance with eps = 0")]
    DegenerateChannel { channel: usize },
    #[error("degenerate statistics: {0}")]
    Degenerate(String),
    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("query error: {0}")]
    Query(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("run error: {0}")]
    Run(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
