//! Class-incremental protocol driver: stream generation, end-to-end runs,
//! baselines and metrics.

mod check;
mod config;
mod metrics;
mod run;
mod stream;

use std::io;

use thiserror::Error;

pub use check::{self_check, CheckResult};
pub use config::ProtocolConfig;
pub use metrics::{compute_metrics, AccuracyMatrix, MetricsReport};
pub use run::{
    compare, run_baseline_naive, run_baseline_naive_with, run_joint_upper, run_joint_upper_with, run_mcigle,
    run_mcigle_with, BaselineOutput, Comparison, DataAccess, FeatureExtractor, PhaseDiagnostics, PhaseFeatures, Purpose,
    RunOutput,
};
pub use stream::{generate_stream, PhaseSplit, Stream};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure in phase {phase}: {message}")]
    Numerical { phase: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Tags a module error with the phase it happened in.
pub(crate) trait AtPhase<T> {
    fn at(self, phase: usize) -> Result<T, HarnessError>;
}

impl<T, E: std::fmt::Display> AtPhase<T> for Result<T, E> {
    fn at(self, phase: usize) -> Result<T, HarnessError> {
        self.map_err(|e| HarnessError::Numerical { phase, message: e.to_string() })
    }
}
