use std::path::PathBuf;

use crate::mesh::BoundaryTag;

/// Errors produced by the reconstruction toolkit.
#[derive(Debug, thiserror::Error)]
pub enum MreitError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("electrode {0:?} has no boundary edges")]
    ElectrodeEmpty(BoundaryTag),

    #[error("conductivity is not strictly positive at node {node} (value {value})")]
    NonCoercive { node: usize, value: f64 },

    #[error("conflicting Dirichlet constraints on node {node}: {first} vs {second}")]
    ConflictingConstraint { node: usize, first: f64, second: f64 },

    #[error("system is singular (no Dirichlet constraints on a pure Neumann operator)")]
    SingularSystem,

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("coefficient matrix is singular on triangle {triangle} (det {det:e})")]
    SingularCoefficientMatrix { triangle: usize, det: f64 },

    #[error("reduced system is ill-conditioned (condition estimate {condition:e})")]
    IllConditionedReducedSystem { condition: f64 },

    #[error("snapshot violates the Dirichlet data at node {node} (deviation {deviation:e})")]
    TraceMismatch { node: usize, deviation: f64 },

    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, MreitError>;

impl MreitError {
    /// True for failures of the numerical pipeline, as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MreitError::NonCoercive { .. }
                | MreitError::SingularSystem
                | MreitError::NoConvergence { .. }
                | MreitError::SingularCoefficientMatrix { .. }
                | MreitError::IllConditionedReducedSystem { .. }
                | MreitError::TraceMismatch { .. }
                | MreitError::ElectrodeEmpty(_)
        )
    }
}
