use thiserror::Error;

/// Errors raised by the simulation, solver and certificate code.
#[derive(Debug, Error)]
pub enum KclError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("non-finite value in {what} at {location}")]
    NonFinite { what: String, location: String },

    #[error("blow-up at step {step} (t = {time}): {detail}")]
    BlowUp {
        step: u64,
        time: f64,
        detail: String,
    },

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        what: String,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error(
        "fixed-point iteration oscillates with damping {damping}; retry with a smaller damping"
    )]
    Oscillation { damping: f64, history: Vec<f64> },

    #[error("CFL violation: {constraint} requires dt <= {limit:e}, got {dt:e}")]
    Cfl {
        constraint: &'static str,
        limit: f64,
        dt: f64,
    },

    #[error("negative density {value:e} in cell ({ix}, {iy})")]
    NegativeDensity { ix: usize, iy: usize, value: f64 },

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl KclError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        KclError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (divergence, blow-up, CFL, ...) as
    /// opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            KclError::AssumptionViolated(_)
                | KclError::NonFinite { .. }
                | KclError::BlowUp { .. }
                | KclError::NoConvergence { .. }
                | KclError::Oscillation { .. }
                | KclError::Cfl { .. }
                | KclError::NegativeDensity { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, KclError>;
