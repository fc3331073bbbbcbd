//! High-confidence reachability for perception-in-the-loop dynamical systems.
//!
//! The pipeline has two stages. First, perception error is bounded with
//! state-dependent conformal prediction: the state space is partitioned into
//! axis-aligned regions (optimized by a genetic algorithm against a
//! reachability-informed loss) and each region receives a conformal noise
//! bound at its own confidence level, with the per-region confidences summing
//! to the user's trajectory-wide budget. Second, those bounds drive a
//! Taylor-model reachability engine for the abstracted closed loop, with
//! region- and controller-induced branching kept in check by a
//! cluster-and-enclose consolidation step.

pub mod conformal;
pub mod config;
pub mod geometry;
pub mod models;
pub mod partition_opt;
pub mod pipeline;
pub mod reach;
pub mod taylor;

use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("infeasible confidence budget: {0}")]
    InfeasibleBudget(String),
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("elementary function range violation: {0}")]
    RangeViolation(String),
    #[error("verification failure: {0}")]
    Verification(String),
    #[error("optimization failure: {0}")]
    Optimization(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
