use thiserror::Error;

/// Errors produced by every analysis routine in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Simulation produced a non-finite (or over-limit) sample.
    #[error("overflow at step {index} (t = {time})")]
    Overflow { index: usize, time: f64 },

    #[error("singular frequency response: j*{omega} is (numerically) an eigenvalue of A")]
    Singular { omega: f64 },

    /// The operator does not map L2 into L2 (unstable dynamics).
    #[error("unbounded gain: spectral abscissa {abscissa:e} is not negative")]
    Unbounded { abscissa: f64 },

    #[error("ill-posed algebraic loop: condition number {condition:e} exceeds {threshold:e}")]
    IllPosed { condition: f64, threshold: f64 },

    #[error("algebraic loop fixed-point iteration diverged at step {step} (residual {residual:e})")]
    Divergence { step: usize, residual: f64 },

    #[error("rejected environment member: certification margin {margin:e} ({detail})")]
    Certification { margin: f64, detail: String },

    /// Parse/validation failure with a path into the offending document.
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
