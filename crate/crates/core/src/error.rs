use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented range. `field` is a dotted path.
    #[error("invalid parameter `{field}`: {reason}")]
    Param { field: String, reason: String },

    /// The ensemble would not fit in the configured memory budget.
    #[error("ensemble needs {required} bytes, budget is {budget} bytes")]
    Resource { required: u64, budget: u64 },

    /// An API was called with inconsistent arguments.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("regression at k={k} is rank deficient (condition estimate {condition:e})")]
    RankDeficient { k: usize, condition: f64 },

    #[error("non-finite value at iteration {iteration}, path {path}: {what}")]
    NonFinite {
        iteration: usize,
        path: usize,
        what: &'static str,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("oracle did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::Param {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Numerical failures map to exit code 3, configuration problems to 2.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::NonFinite { .. }
                | Error::Invariant(_)
                | Error::NoConvergence { .. }
        )
    }
}
