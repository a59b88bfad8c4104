use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("occupancy entry {value:.3e} at ({s},{a},{s_next}) is below the clamping floor")]
    NegativeOccupancy {
        s: usize,
        a: usize,
        s_next: usize,
        value: f64,
    },

    #[error("unknown generator name '{0}'")]
    UnknownGenerator(String),

    #[error("generator '{0}' is non-differentiable; no inverse derivative available")]
    NonDifferentiableGenerator(String),

    #[error("divergence undefined: p({index}) = {p:.3e} > 0 while q({index}) = 0 for generator '{gen}'")]
    SupportViolation { index: usize, p: f64, gen: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("NaN encountered in {context} at iteration {iteration}")]
    NonFinite { context: String, iteration: usize },

    #[error("oracle did not converge: {0}")]
    OracleNonConvergence(String),

    #[error("value iteration did not converge within {sweeps} sweeps (residual {residual:.3e})")]
    ValueIterationDiverged { sweeps: usize, residual: f64 },

    #[error("malformed dataset record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown baseline '{0}'")]
    UnknownBaseline(String),

    #[error("invalid gridworld spec: {0}")]
    InvalidGridworld(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
