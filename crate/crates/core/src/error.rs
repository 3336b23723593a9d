use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    Grid(String),

    #[error("index {index} out of range for grid of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("RL half-derivative is singular at the initial time (value there is nonzero)")]
    SingularAtInitialTime,

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("invalid field specification: {0}")]
    Field(String),

    #[error("non-finite coefficient at y = {position:?}, t = {time}: {what}")]
    Evaluation {
        what: String,
        position: Vec<f64>,
        time: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("inner iteration did not converge at step {step} (t = {time}), residual {residual:e}")]
    NoConvergence { step: usize, time: f64, residual: f64 },

    #[error("solution diverged at t = {time} (last finite state norm {last_norm:e}, a-priori bound {bound:e})")]
    Divergence { time: f64, last_norm: f64, bound: f64 },

    #[error("Picard box rejected: {0}")]
    InvalidBox(String),

    #[error("no positive dyadic delta satisfies the Picard conditions")]
    NoDelta,

    #[error("contraction rate {rate:.3} exceeds 1/2 in window starting at t = {time}")]
    ContractionViolated { rate: f64, time: f64 },

    #[error("Gronwall series not converged after {iterations} levels (partial sum {partial:e}, last term {last:e})")]
    SeriesNotConverged {
        iterations: usize,
        partial: f64,
        last: f64,
    },

    #[error("singular matrix encountered: {0}")]
    Singular(String),

    #[error("missing data: {0}")]
    Missing(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
