//! Error type shared by every stage of the pipeline.

use std::fmt;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Invariant,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorKind::Config => "config",
            ErrorKind::Numerical => "numerical",
            ErrorKind::Invariant => "invariant",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("geometry: boxes `{a}` and `{b}` overlap with different materials")]
    Overlap { a: String, b: String },
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("{what} did not converge (residual {residual:.3e})")]
    NoConvergence { what: String, residual: f64 },
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Parse(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => ErrorKind::Config,
            Error::Overlap { .. } | Error::Geometry(_) => ErrorKind::Config,
            Error::NoConvergence { .. } | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Invariant(_) => ErrorKind::Invariant,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
