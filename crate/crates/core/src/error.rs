use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidInput(String),

    /// The logistic likelihood has no finite maximiser.
    #[error("perfect separation in the propensity model along `{column}`")]
    Separation { column: String },

    #[error("singular propensity design matrix (a ridge penalty can be enabled explicitly)")]
    SingularDesign,

    #[error("numerical failure in {stage}: {message}")]
    Numerical { stage: &'static str, message: String },
}

/// Coarse classification used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidInput(_) => ErrorKind::Config,
            Error::Io { .. } | Error::Csv(_) | Error::Data(_) => ErrorKind::Data,
            Error::Separation { .. } | Error::SingularDesign | Error::Numerical { .. } => {
                ErrorKind::Numerical
            }
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numerical(stage: &'static str, message: impl Into<String>) -> Self {
        Error::Numerical {
            stage,
            message: message.into(),
        }
    }
}
