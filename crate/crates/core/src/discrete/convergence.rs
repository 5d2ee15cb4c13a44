//! Sup-grid distance between discrete cumulants and the limit cumulant.

use serde::{Deserialize, Serialize};

use super::model::{build_discrete_model, DiscreteModel, DEFAULT_THETA};
use super::DiscreteError;
use crate::cumulant::{envelope_bounds, solve_path, SolverOptions, DEFAULT_TOLERANCE};
use crate::environment::EnvironmentSpec;

/// Default `η_T` for the envelope constants.
pub const DEFAULT_ETA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// `r ∈ {j T / r_points : j < r_points}`, restricted to `r <= t`.
    pub r_points: usize,
    /// `t ∈ {i T / t_points : 1 <= i <= t_points}`.
    pub t_points: usize,
    /// Evenly spaced λ in `[a, b]`, endpoints included.
    pub lambda_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            r_points: 10,
            t_points: 10,
            lambda_points: 7,
        }
    }
}

impl GridSpec {
    pub fn times(&self, horizon: f64) -> (Vec<f64>, Vec<f64>) {
        let r = (0..self.r_points.max(1))
            .map(|j| horizon * j as f64 / self.r_points.max(1) as f64)
            .collect();
        let t = (1..=self.t_points.max(1))
            .map(|i| horizon * i as f64 / self.t_points.max(1) as f64)
            .collect();
        (r, t)
    }

    pub fn lambdas(&self, a: f64, b: f64) -> Vec<f64> {
        let n = self.lambda_points.max(2);
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceSettings {
    pub theta: f64,
    pub eta: f64,
    pub tol: f64,
    pub grid: GridSpec,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            eta: DEFAULT_ETA,
            tol: DEFAULT_TOLERANCE,
            grid: GridSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelError {
    pub k: u64,
    pub generations: usize,
    /// `sup |v_k - v|` over the grid.
    pub sup_error: f64,
    /// Grid point `(r, t, λ)` attaining `sup_error`.
    pub worst: (f64, f64, f64),
    /// `sup |e^{-v_k} - e^{-v}|` over the grid.
    pub sup_laplace_gap: f64,
    /// Grid values of `v_k` outside `[lower, upper]`.
    pub corridor_violations: usize,
    pub corridor_points: usize,
    pub downgrades: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub horizon: f64,
    pub a: f64,
    pub b: f64,
    pub lower: f64,
    pub upper: f64,
    pub r_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub levels: Vec<LevelError>,
}

/// Limit cumulant `v(r, t; λ)` on the grid, indexed `[t][λ][r]`.
pub struct LimitGrid {
    pub r_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub values: Vec<Vec<Vec<f64>>>,
}

pub fn limit_grid(
    env: &EnvironmentSpec,
    horizon: f64,
    lambdas: &[f64],
    grid: &GridSpec,
    tol: f64,
) -> Result<LimitGrid, DiscreteError> {
    let (r_grid, t_grid) = grid.times(horizon);
    let opts = SolverOptions::with_tol(tol);
    let mut values = Vec::with_capacity(t_grid.len());
    for &t in &t_grid {
        let rs: Vec<f64> = r_grid.iter().copied().filter(|&r| r <= t).collect();
        let mut per_lambda = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let path = solve_path(env, t, lambda, &rs, &opts)?;
            per_lambda.push(path.into_iter().map(|s| s.value).collect());
        }
        values.push(per_lambda);
    }
    Ok(LimitGrid {
        r_grid,
        t_grid,
        lambdas: lambdas.to_vec(),
        values,
    })
}

/// Compares one model against a precomputed limit grid.
pub fn level_error(model: &DiscreteModel, limit: &LimitGrid, corridor: (f64, f64)) -> Result<LevelError, DiscreteError> {
    let time = model.time();
    let mut out = LevelError {
        k: model.level(),
        generations: model.generations(),
        sup_error: 0.0,
        worst: (0.0, 0.0, 0.0),
        sup_laplace_gap: 0.0,
        corridor_violations: 0,
        corridor_points: 0,
        downgrades: model.downgrades().len(),
    };
    for (ti, &t) in limit.t_grid.iter().enumerate() {
        for (li, &lambda) in limit.lambdas.iter().enumerate() {
            let path = model.cumulant_path(t, lambda)?;
            for (ri, &v) in limit.values[ti][li].iter().enumerate() {
                let r = limit.r_grid[ri];
                let vk = path[time.gamma_k(r).min(path.len() - 1)];
                let err = (vk - v).abs();
                if err > out.sup_error {
                    out.sup_error = err;
                    out.worst = (r, t, lambda);
                }
                out.sup_laplace_gap = out.sup_laplace_gap.max(((-vk).exp() - (-v).exp()).abs());
                out.corridor_points += 1;
                if vk < corridor.0 || vk > corridor.1 {
                    out.corridor_violations += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Sup-grid errors `|v_k - v|` for each `k` in `k_list`, with corridor checks.
pub fn convergence_report(
    env: &EnvironmentSpec,
    k_list: &[u64],
    horizon: f64,
    a: f64,
    b: f64,
    settings: &ConvergenceSettings,
) -> Result<ConvergenceReport, DiscreteError> {
    if !(0.0 < a && a < b) {
        return Err(DiscreteError::InvalidArgument(format!("need 0 < a < b, got [{a}, {b}]")));
    }
    if k_list.is_empty() || k_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DiscreteError::InvalidArgument("k list must be nonempty and increasing".into()));
    }
    let envelope = envelope_bounds(env, horizon, a, b, settings.eta)?;
    let lambdas = settings.grid.lambdas(a, b);
    let limit = limit_grid(env, horizon, &lambdas, &settings.grid, settings.tol)?;
    let mut levels = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let model = build_discrete_model(env, k, settings.theta)?;
        levels.push(level_error(&model, &limit, (envelope.lower, envelope.upper))?);
    }
    Ok(ConvergenceReport {
        horizon,
        a,
        b,
        lower: envelope.lower,
        upper: envelope.upper,
        r_grid: limit.r_grid,
        t_grid: limit.t_grid,
        lambdas,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{Coefficients, EnvironmentBuilder, JumpKernel};

    #[test]
    fn feller_errors_decrease() {
        let env = EnvironmentBuilder::new(1.0)
            .piece(0.0, 1.0, 1.0, Coefficients::new(0.0, 1.0, JumpKernel::zero()))
            .build()
            .unwrap();
        let settings = ConvergenceSettings {
            grid: GridSpec { r_points: 4, t_points: 2, lambda_points: 3 },
            ..Default::default()
        };
        let report = convergence_report(&env, &[20, 80, 320], 1.0, 0.5, 2.0, &settings).unwrap();
        let errs: Vec<f64> = report.levels.iter().map(|l| l.sup_error).collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(report.levels.iter().all(|l| l.corridor_violations == 0));
    }

    #[test]
    fn null_environment_is_exact() {
        let env = EnvironmentBuilder::new(1.0)
            .piece(0.0, 1.0, 1.0, Coefficients::default())
            .build()
            .unwrap();
        let report = convergence_report(&env, &[5, 10], 1.0, 0.5, 2.0, &ConvergenceSettings::default()).unwrap();
        assert!(report.levels.iter().all(|l| l.sup_error == 0.0));
    }
}
