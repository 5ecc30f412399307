use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    /// A covariance produced by a homotopy or kernel step left the PSD cone.
    #[error("PSD violation: smallest eigenvalue {min_eigenvalue:e}")]
    PsdViolation { min_eigenvalue: f64 },

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("degenerate efficiency variance sigma_f = {0:e}")]
    DegenerateSigmaF(f64),

    #[error("config parse error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("config validation error: {0}")]
    ConfigValidate(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the CLI.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ConfigParse { .. } => "config-parse",
            Error::ConfigValidate(_) => "config-validate",
            Error::Io { .. } | Error::Serialize(_) => "io",
            Error::InvalidInput(_) | Error::DegenerateSigmaF(_) => "config-validate",
            // a functional evaluated outside its domain mid-run
            Error::Domain(_)
            | Error::NotSymmetric { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::PsdViolation { .. } => "numeric",
        }
    }
}
