use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated stack: header declares {expected} payload bytes, file holds {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("center of mass undefined: pattern has zero total intensity")]
    UndefinedCom,

    #[error("degenerate axis: {0} column has zero spread")]
    DegenerateAxis(&'static str),

    #[error("degenerate clustering input: {0}")]
    DegenerateInput(String),

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::UndefinedCom
            | Error::DegenerateAxis(_)
            | Error::DegenerateInput(_)
            | Error::EmptySelection(_)
            | Error::Domain(_) => 3,
            _ => 2,
        }
    }
}
