use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Exponential-time routines refuse markets above their size cap.
    #[error("market of size {rows}x{cols} exceeds the cap of {cap} agents per side")]
    TooLarge {
        rows: usize,
        cols: usize,
        cap: usize,
    },

    /// The input matching is not optimal, so no dual solution exists for it.
    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("failed to parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(key: &str, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
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
