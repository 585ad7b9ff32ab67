use thiserror::Error;

/// Errors raised by the analysis library.
#[derive(Debug, Error)]
pub enum EsrError {
    /// A physical quantity outside its domain (non-positive frequency, field, width...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent arguments.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The transmission trace contains no detectable resonance dip.
    #[error("no resonance: {0}")]
    NoResonance(String),

    /// Every candidate fit failed.
    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EsrError>;

pub(crate) fn domain(msg: impl Into<String>) -> EsrError {
    EsrError::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> EsrError {
    EsrError::InvalidArgument(msg.into())
}

/// Reject non-finite or non-positive values.
pub(crate) fn require_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} must be finite and > 0, got {value}")))
    }
}

pub(crate) fn require_non_negative(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} must be finite and >= 0, got {value}")))
    }
}
