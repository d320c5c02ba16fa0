use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid interval [{start}, {end}]: start must be strictly below end")]
    InvalidInterval { start: f64, end: f64 },

    #[error("capacity exceeded for {what}: {requested} > cap {cap}{}", hint.as_deref().map(|h| format!(" ({h})")).unwrap_or_default())]
    Capacity {
        what: &'static str,
        requested: f64,
        cap: f64,
        hint: Option<String>,
    },

    #[error("non-finite value in {context} at state {state:?}")]
    Numeric { context: String, state: Vec<f64> },

    #[error("no convergence after {iterations} iterations (last residual {last:e})", last = residuals.last().copied().unwrap_or(f64::NAN))]
    NotConverged {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("forward-backward sweep cycles with period {cycle_length} (detected at iteration {iteration})")]
    Cycling { cycle_length: usize, iteration: usize },

    #[error("forward-backward sweep stalled at iteration {iteration}: {changed} intervals violate the argmin condition but no update lowers the cost")]
    Stalled { iteration: usize, changed: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                context,
                expected,
                found,
            })
        }
    }
}
