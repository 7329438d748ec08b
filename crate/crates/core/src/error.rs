use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("integration exceeded {steps} steps before reaching t = {t_end}")]
    TooManySteps { steps: usize, t_end: f64 },

    #[error("trajectory left the positive orthant at t = {t} (state {state})")]
    NonPositiveState { t: f64, state: usize },

    #[error("series too short: {len} samples, need at least {needed}")]
    SeriesTooShort { len: usize, needed: usize },

    #[error("sampling grid is not uniform at sample {index}")]
    NonUniformGrid { index: usize },

    #[error("negative input {value} to basis function {basis}")]
    NegativeInput { basis: String, value: f64 },

    #[error("ground-truth weights need the default repressilator dictionary")]
    NonDefaultSpec,

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("infinite cost: block {block} has zero variance but nonzero weight")]
    InfiniteCost { block: usize },

    #[error("block {block} has zero gradient term but nonzero weight")]
    ZeroAlpha { block: usize },

    #[error("iterates diverged after {iterations} iterations")]
    Diverged { iterations: usize },

    #[error("reference weights have zero norm")]
    ZeroNormTruth,

    #[error("inner solver failed at outer iteration {iteration}: {source}")]
    InnerSolver {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
