use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature did not converge ({reason}); achieved error bound {achieved:e}")]
    Quadrature { achieved: f64, reason: String },

    #[error("tail vanishes at x = {x}: long-tailed classes require F̄(x) > 0")]
    ZeroTail { x: f64 },

    #[error("infinite positive mean")]
    InfinitePositiveMean,

    #[error("sup over n did not certify within {scanned} terms; best bound found {best}")]
    SupNotCertified { scanned: u64, best: f64 },

    #[error("divergent or uncertifiable: {0}")]
    Divergent(String),

    #[error("boundary is not monotone at n = {index}")]
    NonMonotoneBoundary { index: u64 },

    #[error("rule did not resolve by the horizon cap on {unresolved} of {total} replications")]
    Unresolved { unresolved: u64, total: u64 },

    #[error("lattice state space needs {required} cells, budget is {budget}")]
    StateBudget { required: u128, budget: u128 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
