use thiserror::Error;

use crate::lpsolve::LpStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid is disconnected: buses {unreachable:?} cannot be reached from bus {root}")]
    Disconnected { root: usize, unreachable: Vec<usize> },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    #[error("simplex hit the iteration limit ({iterations})\n{dump}")]
    LpIterationLimit { iterations: usize, dump: String },

    #[error("interval {interval}: dispatch LP is {status:?}")]
    Dispatch { interval: usize, status: LpStatus },

    #[error("every interval of the simulated day was infeasible")]
    NoFeasibleIntervals,

    #[error("ADMM iterate became non-finite at iteration {iteration}\n{dump}")]
    Diverged { iteration: usize, dump: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Name of the subsystem that raised the error, used to tag CLI messages.
    pub fn module(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) | Error::Disconnected { .. } => "netmodel",
            Error::Dimension { .. } | Error::Domain(_) => "input",
            Error::NotPositiveDefinite(_) | Error::NonFinite(_) => "numerics",
            Error::LpIterationLimit { .. } => "lpsolve",
            Error::Dispatch { .. } => "dispatch",
            Error::NoFeasibleIntervals => "marketsim",
            Error::Diverged { .. } => "recovery",
            Error::Config(_) => "config",
            Error::Schema(_) | Error::Io(_) | Error::Json(_) => "io",
        }
    }
}
