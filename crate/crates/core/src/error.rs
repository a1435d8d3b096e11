use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("spectral quantity rho = {rho} is not below 1; graph disconnected or bipartite-degenerate")]
    DegenerateSpectrum { rho: f64 },

    #[error("invalid problem instance: {0}")]
    InvalidProblem(String),

    #[error("{op} is not defined for problem kind {kind}")]
    UnsupportedKind { op: &'static str, kind: &'static str },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("divergence at round {t}: agent {agent} has |theta| = {norm:e}")]
    Diverged { t: usize, agent: usize, norm: f64 },

    #[error("missing or malformed parameter window for agent {agent}")]
    MissingWindow { agent: usize },

    #[error("payment inputs must be nonnegative: {0}")]
    NegativePaymentInput(String),

    #[error("reward undefined: {0}")]
    InvalidReward(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("agent {agent} has a best-response policy that was not resolved before the run")]
    UnresolvedPolicy { agent: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
