use std::io;

/// Crate-wide error type.
///
/// The CLI maps `Argument` to a usage failure (exit 1) and everything else to
/// a data/format failure (exit 2).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// A text input (corpus, impact file, query log, catalog) failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A binary container is malformed, truncated, or corrupt.
    #[error("format error: {0}")]
    Format(String),

    /// A value is outside its documented range.
    #[error("range error: {0}")]
    Range(String),

    /// A caller-supplied argument violates a contract.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Artifacts built against different indexes were mixed.
    #[error("compatibility error: {0}")]
    Compatibility(String),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
