use thiserror::Error;

use crate::dual_solver::SolveTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("site index {index} out of range for {n} sites")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("support mask selects no pixels")]
    EmptyMask,
    #[error("sites {0} and {1} coincide")]
    CoincidentSites(usize, usize),
    #[error("at least {needed} sites are required, got {got}")]
    TooFewSites { needed: usize, got: usize },
    #[error("partitions were built on different grids")]
    GridMismatch,
    #[error("cell {0} is empty")]
    EmptyCell(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("infeasible storage fee: {0}")]
    InfeasibleFee(String),
    #[error("damped Newton did not converge (residual {residual:e} after {iterations} iterations)")]
    NotConverged {
        residual: f64,
        iterations: usize,
        trace: Box<SolveTrace>,
    },
    #[error("graph has a cycle through {0:?}")]
    Cyclic(Vec<usize>),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
