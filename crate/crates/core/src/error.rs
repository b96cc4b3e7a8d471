use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {block} update at iteration {iteration}")]
    NonFinite { block: &'static str, iteration: usize },

    #[error("fit is not at a fixed point: residual {residual:e} exceeds {limit:e}")]
    NotAtFixedPoint { residual: f64, limit: f64 },

    #[error("linear system is singular or ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    OptimizerFailed {
        iterations: usize,
        grad_norm: f64,
        last: Vec<f64>,
    },

    #[error("refit on the {side} side of observation {index} did not converge")]
    RefitFailed { side: &'static str, index: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
