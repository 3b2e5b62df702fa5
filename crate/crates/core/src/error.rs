use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A factorization or a result check failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Numerical failure inside the filter loop, annotated with where it happened.
    #[error("numerical failure at run {run:?}, vehicle {vehicle:?}, step {step}: {message}")]
    FilterStep {
        run: Option<usize>,
        vehicle: Option<usize>,
        step: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// True for errors that come from the numerics rather than from inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::FilterStep { .. })
    }

    /// Attach run/vehicle context to a step-level failure.
    pub fn in_vehicle(self, run: Option<usize>, vehicle: usize) -> Self {
        match self {
            Error::FilterStep { step, message, .. } => Error::FilterStep {
                run,
                vehicle: Some(vehicle),
                step,
                message,
            },
            Error::Numerical(message) => Error::FilterStep {
                run,
                vehicle: Some(vehicle),
                step: 0,
                message,
            },
            other => other,
        }
    }
}
