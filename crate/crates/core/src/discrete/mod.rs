//! Galton–Watson approximations of the limit process: structural pgfs,
//! discrete cumulants and the diagnostics comparing them with the mechanism.

mod convergence;
mod model;
mod pgf;
mod residuals;

use thiserror::Error;

use crate::cumulant::CumulantError;
use crate::environment::EnvironmentError;

pub use convergence::{
    convergence_report, level_error, limit_grid, ConvergenceReport, ConvergenceSettings, GridSpec, LevelError,
    LimitGrid, DEFAULT_ETA,
};
pub use model::{
    atom_delta, big_phi, build_discrete_model, discrete_cumulant, h_k, pgf_compose_eval, pgf_eval, small_phi,
    small_phi_via_big, DiscreteModel, Downgrade, Role, Stage, COEFFICIENT_TOLERANCE, DEFAULT_THETA,
};
pub use pgf::{Component, Pgf};
pub use residuals::{condition_a_residuals, mechanism_integral, residual_bounds, JumpResidual, ResidualTable};

#[derive(Debug, Error)]
pub enum DiscreteError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("composed generating function has value {value} <= 0")]
    ImproperComposition { value: f64 },
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Cumulant(#[from] CumulantError),
}
