//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("boundary tagging incomplete: edge ({0}, {1}) matched no rule")]
    TaggingIncomplete(usize, usize),

    #[error("empty matrix: {0}")]
    EmptyMatrix(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotCoercive(String),

    #[error("coercivity violated for sample {sample}: {detail}")]
    CoercivityViolation { sample: usize, detail: String },

    #[error("greedy stagnated at N = {basis_size} with max estimator {max_estimator:.3e}")]
    Stagnation {
        basis_size: usize,
        max_estimator: f64,
    },

    #[error("reduced space is empty")]
    EmptySpace,

    #[error("geometric map degenerate at rho = {rho:.4}: det J = {det:.3e}")]
    MapDegenerate { rho: f64, det: f64 },

    #[error("iterative solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("training diverged at epoch {0}")]
    TrainingDiverged(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that stem from numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotCoercive(_)
                | Error::CoercivityViolation { .. }
                | Error::Stagnation { .. }
                | Error::MapDegenerate { .. }
                | Error::NoConvergence { .. }
                | Error::TrainingDiverged(_)
                | Error::EmptySpace
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
