use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: &'static str, reason: String },

    #[error("initial sets overlap at {count} site(s)")]
    Overlap { count: usize },

    #[error("state space too large: {states} states exceeds limit {limit}")]
    Size { states: usize, limit: usize },

    #[error("step size control failed at t = {time} (h = {step})")]
    Step { time: f64, step: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension {d} too small: {what} is not positive ({value})")]
    DimensionTooSmall { d: usize, what: &'static str, value: f64 },

    #[error("process went extinct during sampling (chain {chain} at t = {time})")]
    ExtinctionDuringSampling { chain: usize, time: f64 },

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            field,
            reason: reason.into(),
        }
    }
}
