use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at node {index} ({context})")]
    NonFinite { index: usize, context: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("linear solve did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("solver blew up at step {step}: {reason}")]
    Unstable { step: usize, reason: String },

    #[error("constant-mode decomposition is undefined: the boundary impedance integrates to zero (fully reflective boundary)")]
    ReflectiveBoundary,

    #[error("normal operator is not positive at CG iteration {iteration}: <s, N s> = {value:.3e}")]
    Indefinite { iteration: usize, value: f64 },

    #[error("CG residual grew from {previous:.3e} to {current:.3e} at iteration {iteration}")]
    Diverged {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("reference field has zero norm")]
    ZeroNorm,

    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("config key `{key}`: {message}")]
    ConfigValue { key: String, message: String },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by user configuration or input files rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::ConfigSyntax { .. }
                | Error::ConfigValue { .. }
                | Error::InvalidParameter { .. }
                | Error::InvalidGrid(_)
                | Error::GridMismatch(_)
                | Error::LengthMismatch { .. }
                | Error::Format { .. }
                | Error::Io(_)
        )
    }
}
