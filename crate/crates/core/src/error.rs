use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("trend basis is rank deficient on the design ({0})")]
    SingularTrend(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("kriging fit failed at every start: {0}")]
    Fit(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("evaluation budget exhausted: {used} of {max} runs used, {requested} requested")]
    Budget {
        used: usize,
        max: usize,
        requested: usize,
    },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("all importance weights vanished")]
    DegenerateWeight,

    #[error("degenerate convergence diagnostic: {0}")]
    DegenerateDiagnostic(String),

    #[error("Q2 undefined: observations have zero spread")]
    UndefinedQ2,

    #[error("prior was not built from an elicitation surface C_e")]
    Elicitation,

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("forward model failed: {0}")]
    Forward(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
