//! Experiment layer: configuration, ensemble statistics, convergence fits,
//! the stochastic-integral audit, stability probes and CSV output.

pub mod audit;
pub mod config;
pub mod convergence;
pub mod csv;
pub mod ensemble;
pub mod stability;
pub mod stats;

use thiserror::Error;

use crate::propagator::TrajectoryFailure;
use crate::reference::ReferenceError;
use crate::system::ModelError;

pub use audit::{run_integral_audit, AuditCell, AuditReport};
pub use config::{ModelKind, ModelSetup, Observable, RunConfig, Solver};
pub use convergence::{run_convergence, ConvergencePoint, ConvergenceReport};
pub use ensemble::{run_ensemble, run_reference, ReferenceRun};
pub use stability::{run_stability_probe, StabilityRow};
pub use stats::{EnsembleSeries, MomentTable, Welford};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Diverged(#[from] TrajectoryFailure),
    #[error("insufficient precision: {0}")]
    InsufficientPrecision(String),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
    #[error("output error: {0}")]
    Csv(#[from] ::csv::Error),
}

impl HarnessError {
    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Diverged(_) => 3,
            Self::InsufficientPrecision(_) => 4,
            _ => 1,
        }
    }
}
