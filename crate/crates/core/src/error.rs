use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("format error in {path}: {location}: {message}")]
    Format {
        path: PathBuf,
        /// Byte offset or line number of the offending data.
        location: String,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("flow diverged at step {step}")]
    Divergence { step: usize },

    #[error("point outside the valid domain: {0}")]
    Domain(String),

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("degenerate crossing at t={t}: |H| below tolerance at both segment ends")]
    DegenerateCrossing { t: f64 },

    #[error("tangential crossing: transversality denominator {denominator:e} below tolerance")]
    TangentialCrossing { denominator: f64 },

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("non-finite energy at initialization")]
    NonFiniteEnergy,
}

impl Error {
    /// Errors raised by the numerics rather than by bad arguments or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::DegenerateCrossing { .. }
                | Error::TangentialCrossing { .. }
                | Error::NonFiniteEnergy
                | Error::UndefinedMetric(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
