use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("vertex {vertex} has degree zero")]
    DegreeZero { vertex: usize },

    #[error("vertex {vertex} has an empty neighborhood after removing {failed} failed links")]
    EmptyNeighborhood { vertex: usize, failed: usize },

    #[error("row {row} sums to {sum}, expected 1")]
    NotRowStochastic { row: usize, sum: f64 },

    #[error("negative weight {weight} at ({row}, {col})")]
    NegativeWeight { row: usize, col: usize, weight: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("policy row sum {sum} exceeds 1 at t={time}, agent {agent}, state {from}")]
    PolicyRowSum {
        time: f64,
        agent: usize,
        from: usize,
        sum: f64,
    },

    #[error("policy validation failed: {0}")]
    PolicyValidation(String),

    #[error("operation requires a homogeneous policy")]
    NonHomogeneousPolicy,

    #[error("state space of size {required} exceeds cap {cap}")]
    CapExceeded { required: u128, cap: usize },

    #[error("non-finite derivative at t={time}, component {component}")]
    NonFinite { time: f64, component: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input (configuration, parameters,
    /// model validation) as opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidParameter(_)
            | Error::DegreeZero { .. }
            | Error::EmptyNeighborhood { .. }
            | Error::NotRowStochastic { .. }
            | Error::NegativeWeight { .. }
            | Error::DimensionMismatch(_)
            | Error::PolicyValidation(_)
            | Error::NonHomogeneousPolicy
            | Error::CapExceeded { .. }
            | Error::Parse { .. }
            | Error::Config(_) => true,
            Error::Replicate { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
