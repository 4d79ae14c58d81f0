//! Non-rigid registration of the template onto the lifted target.

mod config;
mod energy;
mod register;

use thiserror::Error;

pub use config::{RegistrationConfig, DEFAULT_MEMBRANE_SCALE};
pub use energy::DeformationModel;
pub use register::{prune_pairs, register, InnerStep, Registration, RegistrationTrace, TraceRecord};

use crate::geom::{GeomError, SolveError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NonrigidError {
    #[error("no active correspondence pairs")]
    EmptyPairSet,
    #[error("every pair was pruned at outer iteration {iteration}")]
    NoActivePairs { iteration: usize, trace: Box<RegistrationTrace> },
    #[error("expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid registration configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}
