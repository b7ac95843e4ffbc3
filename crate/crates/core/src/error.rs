use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// `L_g h` vanished (or is below the refusal threshold), so the input no
    /// longer appears in the barrier derivative.
    #[error("relative-degree violation: |Lg_h| = {norm:e}{}", fmt_state(.state))]
    RelativeDegree { norm: f64, state: Option<Vec<f64>> },

    #[error("invalid objective: {0}")]
    InvalidObjective(String),

    #[error("invalid constraint set: {0}")]
    InvalidConstraints(String),

    #[error("quadratic program infeasible: {0}")]
    Infeasible(String),

    /// The closed-form minimizer failed its KKT replay; both answers are kept
    /// so the discrepancy can be inspected.
    #[error("closed-form solution failed KKT check (residual {residual:e}); closed form {closed_form:?}, oracle {oracle:?}")]
    Inconsistent {
        closed_form: Vec<f64>,
        oracle: Option<Vec<f64>>,
        residual: f64,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid class-K function: {0}")]
    InvalidClassK(String),

    #[error("state diverged at step {step} (t = {time})")]
    Divergence { step: usize, time: f64 },

    #[error("disturbance magnitude {value} exceeds declared bound {bound} at t = {time}")]
    DisturbanceBound { time: f64, value: f64, bound: f64 },
}

fn fmt_state(state: &Option<Vec<f64>>) -> String {
    match state {
        Some(x) => format!(" at state {x:?}"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches the offending state to a relative-degree error.
    pub fn at_state(self, x: &[f64]) -> Self {
        match self {
            Error::RelativeDegree { norm, .. } => Error::RelativeDegree {
                norm,
                state: Some(x.to_vec()),
            },
            other => other,
        }
    }
}
