use thiserror::Error;

/// Errors raised by the engines and by scenario loading.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("receiver coincides with queued vehicle {0}")]
    Coincident(i64),
    #[error("quadrature did not converge: error estimate {achieved:.3e} exceeds tolerance {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },
    #[error("divergent approximation: {0}")]
    Divergent(String),
    #[error("regime violation: {0}")]
    Regime(String),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than by a numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_) | Error::Unsupported(_) | Error::Regime(_) | Error::Io(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
