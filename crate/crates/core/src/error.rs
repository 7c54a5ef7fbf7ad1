use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("barrier domain violated: constraint slack is non-positive at t = {time}")]
    BarrierDomain { time: f64 },

    #[error("infeasible start: the barrier objective is infinite at the initial schedule")]
    InfeasibleStart,

    #[error("no feasible separation found within the delay boxes")]
    NoFeasibleSeparation,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid scenario at `{path}`: {message}")]
    Scenario { path: String, message: String },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
