//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scenarios::builtin_scenario;
use super::ExpError;
use crate::cumulant::DEFAULT_TOLERANCE;
use crate::discrete::{GridSpec, DEFAULT_ETA, DEFAULT_THETA};
use crate::environment::{validate_admissible, EnvironmentDescription, EnvironmentSpec};

/// Environment variable overriding the output directory of the config.
pub const OUT_DIR_ENV: &str = "CBVE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "cbve-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaRange {
    pub a: f64,
    pub b: f64,
    #[serde(default = "default_lambda_points")]
    pub points: usize,
}

fn default_lambda_points() -> usize {
    GridSpec::default().lambda_points
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    #[serde(default = "default_r_points")]
    pub r_points: usize,
    #[serde(default = "default_t_points")]
    pub t_points: usize,
}

fn default_r_points() -> usize {
    GridSpec::default().r_points
}

fn default_t_points() -> usize {
    GridSpec::default().t_points
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            r_points: default_r_points(),
            t_points: default_t_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub replicates: u64,
    #[serde(default = "one")]
    pub x0: f64,
    #[serde(default)]
    pub seed: u64,
    pub times: Vec<f64>,
    pub lambdas: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Name of a built-in scenario; exclusive with `environment`.
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub environment: Option<EnvironmentDescription>,
    /// Defaults to the horizon of the environment.
    #[serde(default)]
    pub horizon: Option<f64>,
    pub lambda: LambdaRange,
    #[serde(default)]
    pub grid: TimeGrid,
    pub k_list: Vec<u64>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub monte_carlo: Option<MonteCarloConfig>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_theta() -> f64 {
    DEFAULT_THETA
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

fn default_tol() -> f64 {
    DEFAULT_TOLERANCE
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

/// A parsed config with its environment built and checked.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub env: EnvironmentSpec,
    pub horizon: f64,
    pub out_dir: PathBuf,
}

impl Experiment {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            r_points: self.config.grid.r_points,
            t_points: self.config.grid.t_points,
            lambda_points: self.config.lambda.points,
        }
    }
}

fn invalid(reason: impl Into<String>) -> ExpError {
    ExpError::Validation {
        reason: reason.into(),
        violations: Vec::new(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExpError> {
        toml::from_str(text).map_err(|e| invalid(format!("config does not parse: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ExpError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn environment_spec(&self) -> Result<EnvironmentSpec, ExpError> {
        match (&self.scenario, &self.environment) {
            (Some(name), None) => builtin_scenario(name).ok_or_else(|| invalid(format!("unknown scenario {name:?}"))),
            (None, Some(desc)) => desc
                .build()
                .map_err(|e| invalid(format!("environment::build: {e}"))),
            (Some(_), Some(_)) => Err(invalid("give either `scenario` or `[environment]`, not both")),
            (None, None) => Err(invalid("missing `scenario` or `[environment]`")),
        }
    }

    /// Applies overrides, builds the environment and checks every invariant of the config.
    pub fn validate(mut self, overrides: &Overrides) -> Result<Experiment, ExpError> {
        if let Some(tol) = overrides.tol {
            self.tol = tol;
        }
        if let (Some(seed), Some(mc)) = (overrides.seed, self.monte_carlo.as_mut()) {
            mc.seed = seed;
        }
        let env = self.environment_spec()?;
        let report = validate_admissible(&env);
        if !report.is_admissible() {
            return Err(ExpError::Validation {
                reason: "environment::validate_admissible: environment is not admissible".into(),
                violations: report.violations,
            });
        }
        let horizon = self.horizon.unwrap_or(env.horizon());
        if !(horizon > 0.0 && horizon <= env.horizon()) {
            return Err(invalid(format!("horizon {horizon} must lie in (0, {}]", env.horizon())));
        }
        let LambdaRange { a, b, points } = self.lambda;
        if !(0.0 < a && a < b && b.is_finite()) {
            return Err(invalid(format!("need 0 < a < b, got [{a}, {b}]")));
        }
        if points < 2 || self.grid.r_points == 0 || self.grid.t_points == 0 {
            return Err(invalid("grids need at least one time point and two λ points"));
        }
        if self.k_list.is_empty() || self.k_list[0] == 0 || self.k_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("k_list must be nonempty, positive and strictly increasing"));
        }
        if b > self.k_list[0] as f64 {
            return Err(invalid(format!("λ range must stay below the smallest k = {}", self.k_list[0])));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(invalid(format!("theta {} must lie in (0, 1)", self.theta)));
        }
        if !(self.eta > 1.0) {
            return Err(invalid(format!("eta {} must exceed 1", self.eta)));
        }
        if !(self.tol > 0.0) {
            return Err(invalid(format!("tol {} must be positive", self.tol)));
        }
        if let Some(mc) = &self.monte_carlo {
            if mc.replicates < 100 {
                return Err(invalid("monte_carlo.replicates must be at least 100"));
            }
            if !(mc.x0 >= 0.0) {
                return Err(invalid("monte_carlo.x0 must be nonnegative"));
            }
            for &k in &self.k_list {
                let z0 = k as f64 * mc.x0;
                if (z0 - z0.round()).abs() > 1e-9 * z0.max(1.0) {
                    return Err(invalid(format!("k x0 = {z0} is not an integer for k = {k}")));
                }
            }
            if mc.times.is_empty() || mc.times.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
                return Err(invalid(format!("monte_carlo.times must be nonempty and lie in [0, {horizon}]")));
            }
            if mc.lambdas.is_empty() || mc.lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
                return Err(invalid("monte_carlo.lambdas must be nonempty and nonnegative"));
            }
        }
        let out_dir = overrides
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        Ok(Experiment {
            config: self,
            env,
            horizon,
            out_dir,
        })
    }
}
