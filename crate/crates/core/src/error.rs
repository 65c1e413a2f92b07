use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("singularity: {0}")]
    Singularity(String),
    #[error("quality error: {singular} of {total} cells singular")]
    Quality { singular: usize, total: usize },
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("inversion stalled at {best} (residual {residual:.3e})")]
    Inversion { best: Complex64, residual: f64 },
    #[error("branch error: {0}")]
    Branch(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("selection error: {0}")]
    Selection(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
