//! Crate-wide error type and the process exit codes used by the `smc` binary.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or unsupported file content (bad magic, bad header, truncation).
    #[error("format error: {0}")]
    Format(String),

    /// Checksum mismatch: the bytes were parseable but fail integrity.
    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    /// Invalid parameters, unknown keys, inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor / geometry dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// NaN or divergence encountered in a numeric routine.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Command-line usage error.
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 0 success, 1 usage, 2 data/format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
