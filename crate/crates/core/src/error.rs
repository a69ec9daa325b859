use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid gridworld: {0}")]
    InvalidWorld(String),

    #[error("adversary returned an invalid distribution for (s={state}, a={action}): {reason}")]
    InvalidDistribution {
        state: usize,
        action: usize,
        reason: String,
    },

    #[error("sinkhorn produced non-finite values{context}; lambda {lambda:e} is too small for the value scale")]
    NonFinite { context: String, lambda: f64 },

    #[error("sinkhorn requires a positive radius, got {0}")]
    NonPositiveRadius(f64),

    #[error("{solver} did not converge in {iterations} sweeps (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("transition record rejected: {0}")]
    RejectedRecord(String),

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
