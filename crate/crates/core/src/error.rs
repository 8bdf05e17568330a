use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Pitch angle reached the Euler-angle representation singularity.
    #[error("pitch angle {pitch} rad is at the Euler singularity (|theta| >= pi/2 - 1e-6)")]
    Singularity { pitch: f64 },

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A problem handed to a solver violates its preconditions.
    #[error("bad problem: {0}")]
    BadProblem(String),

    /// An iterative solver hit its iteration cap with a residual too large.
    #[error("iteration did not converge: residual {residual} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    /// The configuration failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A closed-loop run had to be aborted.
    #[error("simulation aborted: {0}")]
    SimulationAborted(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
