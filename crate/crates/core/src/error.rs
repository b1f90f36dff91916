use thiserror::Error;

/// Errors produced by the simulator, solvers and pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { key: key.into(), msg: msg.into() }
    }

    /// True for failures of numerical solvers and fits (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Solver(_) | Error::Fit(_) | Error::Configuration(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
