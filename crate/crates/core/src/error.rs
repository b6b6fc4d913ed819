use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("degenerate condition: {0}")]
    Degenerate(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit failure: {0}")]
    FitFailure(String),

    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("normalization error: probabilities sum to {0}")]
    Normalization(f64),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("scenario error at {location}: {message}")]
    Scenario { location: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Check that `x` lies in the closed unit interval.
pub(crate) fn check_fraction(name: &'static str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) || x.is_nan() {
        return Err(Error::param(name, format!("{x} is outside [0, 1]")));
    }
    Ok(())
}

pub(crate) fn check_nonneg(name: &'static str, x: f64) -> Result<()> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::param(name, format!("{x} must be finite and non-negative")));
    }
    Ok(())
}
