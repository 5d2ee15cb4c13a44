//! Configuration-driven experiment runner.

mod config;
mod run;
mod scenarios;

use thiserror::Error;

use crate::environment::Violation;

pub use config::{
    Experiment, ExperimentConfig, LambdaRange, MonteCarloConfig, Overrides, TimeGrid, DEFAULT_OUT_DIR, OUT_DIR_ENV,
};
pub use run::{
    run_config_file, run_experiment, write_outputs, LevelSummary, ResidualSummary, RunReport, Timing, Traced,
};
pub use scenarios::{builtin_scenario, list_builtin_scenarios, SCENARIOS};

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("validation failed: {reason}{}", describe(violations))]
    Validation { reason: String, violations: Vec<Violation> },
    #[error("{module}::{operation} failed: {message}")]
    Solver {
        module: &'static str,
        operation: &'static str,
        message: String,
    },
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

fn describe(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("; {:?} at {}: {}", v.condition, v.location, v.detail))
        .collect()
}

impl ExpError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExpError::Validation { .. } => 2,
            ExpError::Solver { .. } => 3,
            ExpError::Output { .. } => 1,
        }
    }

    pub(crate) fn solver(module: &'static str, operation: &'static str, err: impl std::fmt::Display) -> Self {
        ExpError::Solver {
            module,
            operation,
            message: err.to_string(),
        }
    }
}
