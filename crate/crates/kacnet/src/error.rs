//! Crate-wide error type with CLI exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not conform to an operation's rank/shape rules.
    #[error("dimension error in `{op}`: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Mathematically invalid input (e.g. softmax over an empty axis).
    #[error("domain error in `{op}`: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A caller broke an API precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values where finite arithmetic was required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed input data; `line` is set when the source is a file.
    #[error("format error in {path}{}: {detail}", .line.map(|l| format!(":{}", l)).unwrap_or_default())]
    Format {
        path: String,
        line: Option<usize>,
        detail: String,
    },

    /// A record points at an entity that does not exist.
    #[error("reference error: {0}")]
    Reference(String),

    /// Token id outside the vocabulary.
    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    /// Checkpoint cannot be read or does not match the requested configuration.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data/format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
