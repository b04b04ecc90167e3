use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// The CLI maps variants onto exit codes through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("tensor file format error in field `{field}`: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("manifest validation failed for volume `{volume}`: {detail}")]
    Validation { volume: String, detail: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training error at step {step}: {detail}")]
    Training { step: usize, detail: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for bad data, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::Format { .. } | Error::Validation { .. } | Error::Io { .. } => 3,
            Error::Dimension(_) | Error::Contract(_) => 3,
            Error::UndefinedMetric(_) | Error::Normalization(_) => 3,
            Error::Numeric(_) | Error::Training { .. } => 4,
        }
    }
}
