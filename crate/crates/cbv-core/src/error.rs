//! Error type shared by every engine module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("membership error: {0}")]
    Membership(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("regime error: {0}")]
    Regime(String),

    #[error("stability error: {0}")]
    Stability(String),

    #[error("convergence error after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("sign error: {message} (W values {values:?})")]
    Sign { message: String, values: Vec<f64> },
}

impl Error {
    /// Short operation-level code used by the CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Membership(_) => "membership",
            Error::Domain(_) => "domain",
            Error::Validation(_) => "validation",
            Error::Regime(_) => "regime",
            Error::Stability(_) => "stability",
            Error::Convergence { .. } => "convergence",
            Error::Protocol(_) => "protocol",
            Error::Sign { .. } => "sign",
        }
    }
}
