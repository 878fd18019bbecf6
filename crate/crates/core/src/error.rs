use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("data length {len} does not match shape volume {volume}")]
    LengthMismatch { len: usize, volume: usize },
    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("rank {rank} for mode {mode} must lie in 1..={dim}")]
    RankOutOfRange {
        mode: usize,
        rank: usize,
        dim: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("all values are zero; the M-scale has no positive solution")]
    AllZero,
    #[error(
        "M-scale iteration did not converge after {iterations} iterations (last sigma {sigma})"
    )]
    NonConvergence { iterations: usize, sigma: f64 },
    #[error("sample {0} has no observed cells")]
    EmptySample(usize),
    #[error("cell {0} is not observed in any sample")]
    UnobservedCell(usize),
    #[error("screening precondition violated: {0}")]
    Screening(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no regular cells to evaluate")]
    NoRegularCells,
}

pub type Result<T> = core::result::Result<T, Error>;
