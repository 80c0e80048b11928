use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("CFL violation: step {dt} exceeds stable bound {max_dt}")]
    Cfl { dt: f64, max_dt: f64 },

    #[error("thinning invalid: jump probability {probability} per step >= 0.1, reduce dt below {max_dt}")]
    Thinning { probability: f64, max_dt: f64 },

    #[error("{solver} did not converge after {iterations} iterations (last residual {last:e})")]
    NonConvergence { solver: &'static str, iterations: usize, last: f64, residuals: Vec<f64> },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("total mass drifted by {0:e} in one step")]
    MassDrift(f64),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// True when the root cause is a solver failing to converge.
    pub fn is_non_convergence(&self) -> bool {
        match self {
            Error::NonConvergence { .. } => true,
            Error::Context { source, .. } => source.is_non_convergence(),
            _ => false,
        }
    }

    /// True for problems with user input rather than with the numerics.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_) | Error::Domain(_) => true,
            Error::Context { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
