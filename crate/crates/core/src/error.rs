use std::path::PathBuf;

/// Errors produced by the solvers, samplers and file readers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible constraint: mass {mass} exceeds capacity {capacity}")]
    Infeasible { mass: f64, capacity: f64 },

    #[error("solver did not converge: gap {gap:.3e} > tol {tol:.3e} after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        gap: f64,
        tol: f64,
    },

    #[error("target density is not in the solid phase (intermediate area {intermediate_area:.4e} > allowance {allowance:.4e})")]
    NotSolid {
        intermediate_area: f64,
        allowance: f64,
    },

    #[error("quasi-hole at ({x}, {y}) sits on a quadrature node even after shifting")]
    HoleOnNode { x: f64, y: f64 },

    #[error("sampler diagnostic failure: {0}")]
    Sampler(String),

    #[error("not enough samples: {got} < {needed}")]
    InsufficientSamples { got: usize, needed: usize },

    #[error("config hash mismatch: {expected} vs {found}")]
    HashMismatch { expected: String, found: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
