use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration field failed validation.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// The explicit coagulation step would exceed its stability bound.
    #[error("step dt={dt} exceeds stability bound; suggested dt <= {suggested}")]
    Stability { dt: f64, suggested: f64 },

    /// A path or field evaluation produced a non-finite value.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// No closed-form reference exists for the requested combination.
    #[error("no closed reference: {0}")]
    NoClosedReference(String),

    /// Too many Monte Carlo paths hit the step budget.
    #[error("censored fraction {fraction:.4} exceeds limit {limit}")]
    Censored { fraction: f64, limit: f64 },

    /// Picard iteration failed to contract.
    #[error(
        "picard iteration not contracting (T too large); suggested horizon {suggested_horizon:.4e}"
    )]
    NotContracting { suggested_horizon: f64 },

    /// The oracle integrator could not continue (typically blow-up).
    #[error("integration failed at t={last_time}: {reason}")]
    Integration { last_time: f64, reason: String },

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Fails with a domain error unless `value` is finite and strictly positive.
pub(crate) fn require_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} must be finite and > 0, got {value}"
        )))
    }
}
