use thiserror::Error;

/// Errors raised by model loading, certification, shielding and verification.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed document: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("state {state} has {count} actions, more than the requested degree {degree}")]
    DegreeTooSmall {
        state: usize,
        count: usize,
        degree: usize,
    },

    #[error("policy does not match model: {0}")]
    PolicyMismatch(String),

    #[error("interval iteration did not converge after {iterations} sweeps (gap {gap:e})")]
    NotConverged { iterations: usize, gap: f64 },

    #[error("certificate is not an inductive upper bound for this model")]
    NotInductive,

    #[error("infeasible: beta(initial) = {beta} exceeds the safety bound {bound}")]
    Infeasible { beta: f64, bound: f64 },

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("session has terminated; reset before stepping")]
    Terminated,

    #[error("encoded action {0} is out of range")]
    ActionOutOfRange(usize),

    #[error("shield state (state {state}, level {level}) is not in the reachable closure")]
    UnknownShieldState { state: usize, level: f64 },

    #[error("level closure exceeded {limit} shield states")]
    ClosureOverflow { limit: usize },

    #[error("shield invariant violated: {0}")]
    InvariantViolated(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("invalid grid map: {0}")]
    InvalidMap(String),

    #[error("policy grid of {points} points exceeds the budget of {limit}")]
    GridBudget { points: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
