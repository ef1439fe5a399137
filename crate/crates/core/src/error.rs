use thiserror::Error;

/// Errors raised by the analytic models, solvers and the CLI layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {what} = {value} ({reason})")]
    Domain {
        what: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("index out of range: {what} = {index}, valid range {lo}..={hi}")]
    Index {
        what: &'static str,
        index: usize,
        lo: usize,
        hi: usize,
    },

    /// A packet whose successful access probability is zero never leaves the queue.
    #[error("infeasible link: device {device}, packet {packet} has zero success probability")]
    InfeasibleLink { device: usize, packet: usize },

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("singular balance system for chain of size {0}")]
    Singular(usize),

    #[error("enumeration of {size} plans exceeds cap {cap}")]
    EnumerationCap { size: f64, cap: f64 },

    #[error("no feasible plan found")]
    NoFeasiblePlan,

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(what: &'static str, value: f64, reason: &'static str) -> Self {
        Error::Domain { what, value, reason }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
