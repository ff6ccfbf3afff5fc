//! Crate-wide error type.

use thiserror::Error;

/// Unified error for all simulator operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A size or numeric parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A caller broke an operation's contract (shape mismatch, wrong matrix class, ...).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Random graph generation could not reach a connected topology.
    #[error("failed to sample a connected graph after {attempts} attempts (K={num_agents}, p={edge_prob})")]
    Disconnected {
        num_agents: usize,
        edge_prob: f64,
        attempts: usize,
    },

    /// A denominator vanished; raising kappa above zero removes the singularity.
    #[error("singular denominator: {0}; set kappa > 0 to stabilize")]
    Singularity(String),

    /// A floating-point computation produced non-finite values or failed to converge.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A data partition request cannot be satisfied.
    #[error("partition infeasible: {0}")]
    Infeasible(String),

    /// A diagnostics query referenced an iteration that was not recorded.
    #[error("data availability: {0}")]
    DataAvailability(String),

    /// Input files do not share the expected schema.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// Malformed content in an external file (edge list, params, tensor dump, CSV).
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
