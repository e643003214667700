use thiserror::Error;

/// Errors raised by the solvers, analyses and the batch runner.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("not a reaction: f(t,x,0) = {value:e} at t={t}, x={x:?}")]
    NotAReaction { t: f64, x: Vec<f64>, value: f64 },

    #[error("numerical instability at t={t}: non-finite value at node {node}")]
    Instability { t: f64, node: usize },

    #[error("refused: {0}")]
    Refused(String),

    #[error("budget exhausted: {0}")]
    Budget(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("search failed: {0}")]
    Search(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
