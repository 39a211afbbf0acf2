use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
///
/// `Validation` covers malformed inputs (bad labels, dimension mismatches),
/// `Config` covers impossible run configurations, and `Estimation` covers
/// failures of the numerical procedures themselves (non-identifiability,
/// separation, singular information).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    /// Penalized solver ran out of iterations; carries the last iterate so
    /// callers can inspect how far it got.
    #[error("penalized fit did not converge after {iterations} iterations (kkt residual {kkt:.3e})")]
    PenalizedNonConvergence {
        iterations: usize,
        kkt: f64,
        last_iterate: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn estimation(msg: impl Into<String>) -> Self {
        Error::Estimation(msg.into())
    }

    /// Prefix an error message with estimation context such as the event type
    /// or (event, period) cell it occurred in.
    pub fn with_context(self, ctx: &str) -> Self {
        match self {
            Error::Validation(m) => Error::Validation(format!("{ctx}: {m}")),
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Estimation(m) => Error::Estimation(format!("{ctx}: {m}")),
            other => other,
        }
    }

    /// True for errors caused by bad input rather than a failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Config(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_)
        )
    }
}
