use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (shapes, ranges, degenerate data).
    #[error("configuration error: {0}")]
    Config(String),
    /// Caller violated an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),
    /// Non-finite values or other numerical breakdown.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("invalid value for {key}: {reason}")]
    OutOfRange { key: String, reason: String },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable short code naming the failure class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Numeric(_) => "numeric",
            Error::MissingFile(_) => "missing-file",
            Error::Syntax(_) => "syntax",
            Error::OutOfRange { .. } => "out-of-range",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// Process exit code: 1 for usage/configuration problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Usage(_)
            | Error::MissingFile(_)
            | Error::Syntax(_)
            | Error::OutOfRange { .. }
            | Error::Parse { .. } => 1,
            Error::Numeric(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
        }
    }

    pub(crate) fn out_of_range(key: &str, reason: impl Into<String>) -> Self {
        Error::OutOfRange { key: key.to_string(), reason: reason.into() }
    }
}
