//! Backward cumulant equation `v(r,t;λ) = λ - ∫_(r,t] φ(s, v(s,t;λ)) γ(ds)` and
//! the envelope constants bounding its discrete approximations.

use serde::Serialize;
use thiserror::Error;

use crate::environment::{compute_c0, Coefficients, EnvironmentError, EnvironmentSpec};
use crate::mechanism::phi_of;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CumulantError {
    #[error("cumulant became negative ({value}) at time {time}")]
    NegativeCumulant { time: f64, value: f64 },
    #[error("step control failed near time {time}: {reason}")]
    NonConvergence { time: f64, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("envelope does not apply: atom at {time} has Δα = {delta_alpha} <= -1")]
    AtomJumpTooNegative { time: f64, delta_alpha: f64 },
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    /// Upper bound on the integration step in time units.
    pub max_step: f64,
    pub max_steps: usize,
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOLERANCE,
            max_step: f64::INFINITY,
            max_steps: 2_000_000,
        }
    }
}

/// A value with an absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Solved {
    pub value: f64,
    pub error: f64,
}

fn rk4(coeffs: &Coefficients, density: f64, v: f64, h: f64) -> f64 {
    // dv/dσ = -ρ φ(v) with σ the backward time.
    let f = |x: f64| -density * phi_of(coeffs, x);
    let k1 = f(v);
    let k2 = f(v + 0.5 * h * k1);
    let k3 = f(v + 0.5 * h * k2);
    let k4 = f(v + h * k3);
    v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

struct Sweep<'a> {
    env: &'a EnvironmentSpec,
    opts: SolverOptions,
    /// Time span used to turn the global tolerance into a per-unit-time budget.
    span: f64,
    value: f64,
    error: f64,
    steps: usize,
}

impl Sweep<'_> {
    fn check(&self, time: f64) -> Result<(), CumulantError> {
        if self.value < 0.0 || !self.value.is_finite() {
            return Err(CumulantError::NegativeCumulant {
                time,
                value: self.value,
            });
        }
        Ok(())
    }

    /// Integrates the continuous part over `(lo, hi)`, which lies in one piece or gap.
    fn continuous(&mut self, lo: f64, hi: f64) -> Result<(), CumulantError> {
        let ts = self.env.timescale();
        let mid = 0.5 * (lo + hi);
        let Some(piece) = ts.piece_at(mid) else {
            return Ok(());
        };
        let density = ts.pieces()[piece].density;
        if density == 0.0 {
            return Ok(());
        }
        let coeffs = &self.env.piece_coeffs()[piece];
        let length = hi - lo;
        let mut done = 0.0;
        let mut h = length.min(self.opts.max_step);
        while done < length {
            if self.steps >= self.opts.max_steps {
                return Err(CumulantError::NonConvergence {
                    time: hi - done,
                    reason: format!("more than {} steps", self.opts.max_steps),
                });
            }
            let last = h >= length - done;
            let step = if last { length - done } else { h };
            let full = rk4(coeffs, density, self.value, step);
            let half = rk4(coeffs, density, rk4(coeffs, density, self.value, 0.5 * step), 0.5 * step);
            let local = (half - full).abs() / 15.0;
            let budget = (self.opts.tol * step / self.span).max(4.0 * f64::EPSILON * half.abs());
            self.steps += 1;
            if local <= budget {
                self.value = half;
                self.error += local + 2.0 * f64::EPSILON * half.abs();
                done = if last { length } else { done + step };
                self.check(hi - done)?;
                let grow = if local == 0.0 {
                    4.0
                } else {
                    (0.9 * (budget / local).powf(0.2)).clamp(0.2, 4.0)
                };
                h = (step * grow).min(self.opts.max_step);
            } else {
                if !local.is_finite() {
                    return Err(CumulantError::NegativeCumulant {
                        time: hi - done,
                        value: half,
                    });
                }
                let shrink = (0.9 * (budget / local).powf(0.2)).clamp(0.1, 0.9);
                h = step * shrink;
                if h <= 1e-14 * (1.0 + hi.abs()) {
                    return Err(CumulantError::NonConvergence {
                        time: hi - done,
                        reason: "step size underflow".into(),
                    });
                }
            }
        }
        Ok(())
    }

    fn atom(&mut self, j: usize) -> Result<(), CumulantError> {
        let atom = self.env.timescale().atoms()[j];
        let coeffs = &self.env.atom_coeffs()[j];
        let before = self.value;
        self.value = before - phi_of(coeffs, before) * atom.mass;
        self.error += 2.0 * f64::EPSILON * (before.abs() + self.value.abs());
        self.check(atom.time)
    }
}

fn check_times(env: &EnvironmentSpec, r: f64, t: f64, lambda: f64) -> Result<(), CumulantError> {
    let horizon = env.horizon();
    if !(0.0 <= r && r <= t && t <= horizon) {
        return Err(CumulantError::InvalidArgument(format!(
            "need 0 <= r <= t <= {horizon}, got r = {r}, t = {t}"
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(CumulantError::InvalidArgument(format!("λ = {lambda} must be finite and non-negative")));
    }
    Ok(())
}

/// `v(r, t; λ)` for every `r` in `r_points`, returned in the order given.
pub fn solve_path(
    env: &EnvironmentSpec,
    t: f64,
    lambda: f64,
    r_points: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<Solved>, CumulantError> {
    for &r in r_points {
        check_times(env, r, t, lambda)?;
    }
    if !(opts.tol > 0.0) {
        return Err(CumulantError::InvalidArgument(format!("tolerance {} must be positive", opts.tol)));
    }
    let lowest = r_points.iter().copied().fold(t, f64::min);
    let ts = env.timescale();
    let mut stops: Vec<f64> = ts
        .breakpoints()
        .into_iter()
        .filter(|&x| x > lowest && x < t)
        .chain(r_points.iter().copied())
        .chain([t, lowest])
        .collect();
    stops.sort_by(|a, b| b.total_cmp(a));
    stops.dedup();

    let mut order: Vec<usize> = (0..r_points.len()).collect();
    order.sort_by(|&a, &b| r_points[b].total_cmp(&r_points[a]));
    let mut out = vec![Solved { value: 0.0, error: 0.0 }; r_points.len()];
    let mut next = 0;

    let mut sweep = Sweep {
        env,
        opts: *opts,
        span: env.horizon(),
        value: lambda,
        error: 0.0,
        steps: 0,
    };
    for (i, &time) in stops.iter().enumerate() {
        while next < order.len() && r_points[order[next]] >= time {
            out[order[next]] = Solved {
                value: sweep.value,
                error: sweep.error,
            };
            next += 1;
        }
        let Some(&below) = stops.get(i + 1) else {
            break;
        };
        if let Some(j) = ts.atom_at(time) {
            sweep.atom(j)?;
        }
        sweep.continuous(below, time)?;
    }
    while next < order.len() {
        out[order[next]] = Solved {
            value: sweep.value,
            error: sweep.error,
        };
        next += 1;
    }
    Ok(out)
}

/// `v(r, t; λ)` with default options and the given tolerance.
pub fn solve_backward(env: &EnvironmentSpec, r: f64, t: f64, lambda: f64, tol: f64) -> Result<Solved, CumulantError> {
    solve_backward_with(env, r, t, lambda, &SolverOptions::with_tol(tol))
}

pub fn solve_backward_with(
    env: &EnvironmentSpec,
    r: f64,
    t: f64,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<Solved, CumulantError> {
    Ok(solve_path(env, t, lambda, &[r], opts)?[0])
}

/// `E_x[e^{-λ X(t)} | X(r) = x] = e^{-x v(r,t;λ)}`; `x = ∞` gives 0.
pub fn transition_laplace(env: &EnvironmentSpec, x: f64, r: f64, t: f64, lambda: f64) -> Result<f64, CumulantError> {
    if x.is_nan() || x < 0.0 {
        return Err(CumulantError::InvalidArgument(format!("initial state {x} must be in [0, ∞]")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let v = solve_backward(env, r, t, lambda, DEFAULT_TOLERANCE)?.value;
    if x.is_infinite() {
        return Ok(if v > 0.0 { 0.0 } else { 1.0 });
    }
    Ok((-x * v).exp())
}

/// Values of `v(·, t; λ)` on an r-grid for several λ.
#[derive(Debug, Clone, Serialize)]
pub struct CumulantSolution {
    pub t: f64,
    pub lambdas: Vec<f64>,
    /// Increasing; contains every atom and piece boundary in `[0, t]`.
    pub r_grid: Vec<f64>,
    /// `values[i][j] = v(r_grid[j], t; lambdas[i])`.
    pub values: Vec<Vec<f64>>,
    pub errors: Vec<Vec<f64>>,
}

/// The r-grid `extra ∪ breakpoints ∩ [0, t]`, sorted and deduplicated.
pub fn r_grid_with_breakpoints(env: &EnvironmentSpec, t: f64, extra: &[f64]) -> Vec<f64> {
    let mut grid: Vec<f64> = env
        .timescale()
        .breakpoints()
        .into_iter()
        .chain(extra.iter().copied())
        .filter(|&r| (0.0..=t).contains(&r))
        .chain([0.0, t])
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

pub fn solve_grid(
    env: &EnvironmentSpec,
    t: f64,
    lambdas: &[f64],
    extra_r: &[f64],
    opts: &SolverOptions,
) -> Result<CumulantSolution, CumulantError> {
    let r_grid = r_grid_with_breakpoints(env, t, extra_r);
    let mut values = Vec::with_capacity(lambdas.len());
    let mut errors = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let path = solve_path(env, t, lambda, &r_grid, opts)?;
        values.push(path.iter().map(|s| s.value).collect());
        errors.push(path.iter().map(|s| s.error).collect());
    }
    Ok(CumulantSolution {
        t,
        lambdas: lambdas.to_vec(),
        r_grid,
        values,
        errors,
    })
}

/// Envelope `l <= v <= U` for λ in `[a, b]` over `[0, T]`.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeConstants {
    pub horizon: f64,
    pub a: f64,
    pub b: f64,
    pub eta: f64,
    pub c0: f64,
    pub upper: f64,
    pub lower: f64,
    pub f: f64,
    pub h: f64,
    pub eps: f64,
    /// `Λ` on each piece, in piece order.
    pub piece_density: Vec<f64>,
    /// `(time, Δα)` for atoms in `(0, T]`.
    pub atom_jumps: Vec<(f64, f64)>,
    /// `‖α‖(T) = ∫ |Λ| dγ`.
    pub total_variation: f64,
    #[serde(skip)]
    env: Option<EnvironmentSpec>,
}

impl EnvelopeConstants {
    /// `α(r) = ∫_(0,r] Λ(s) γ(ds)`.
    pub fn alpha(&self, r: f64) -> f64 {
        let Some(env) = &self.env else {
            return 0.0;
        };
        let ts = env.timescale();
        let r = r.min(self.horizon);
        let mut value = 0.0;
        for (p, lam) in ts.pieces().iter().zip(&self.piece_density) {
            let len = p.end.min(r) - p.start;
            if len > 0.0 {
                value += lam * p.density * len;
            }
        }
        value
            + self
                .atom_jumps
                .iter()
                .filter(|(time, _)| *time <= r)
                .map(|(_, d)| d)
                .sum::<f64>()
    }
}

fn lambda_density(coeffs: &Coefficients, upper: f64, f: f64, h: f64, eps: f64, eta: f64) -> f64 {
    let m = &coeffs.kernel;
    -0.5 * upper * m.moment(2.0, 0.0, eps) + h * m.moment(1.0, 1.0, eta) - coeffs.b1 - upper * coeffs.c
        - (1.0 - f) * m.moment(1.0, eps, 1.0)
}

/// Constants `U`, `l`, `F`, `H`, `ε` and the function `α` for λ in `[a, b]`.
pub fn envelope_bounds(
    env: &EnvironmentSpec,
    horizon: f64,
    a: f64,
    b: f64,
    eta: f64,
) -> Result<EnvelopeConstants, CumulantError> {
    if !(0.0 < a && a <= b && b.is_finite()) {
        return Err(CumulantError::InvalidArgument(format!("need 0 < a <= b, got [{a}, {b}]")));
    }
    if !(eta > 1.0 && eta.is_finite()) {
        return Err(CumulantError::InvalidArgument(format!("η = {eta} must be finite and > 1")));
    }
    if !(horizon > 0.0 && horizon <= env.horizon()) {
        return Err(CumulantError::InvalidArgument(format!("horizon {horizon} outside (0, {}]", env.horizon())));
    }
    let c0 = compute_c0(env)?;
    let ts = env.timescale();
    let gamma_t = ts.gamma(horizon);
    let upper = (b + c0 * gamma_t + 1.0) * (c0 * gamma_t).exp();
    let f = -(-upper).exp_m1() / upper;
    let h = -(-eta * upper).exp_m1() / (eta * upper);
    let eps = 1.0f64.min(f / upper);

    let piece_density: Vec<f64> = env
        .piece_coeffs()
        .iter()
        .map(|c| lambda_density(c, upper, f, h, eps, eta))
        .collect();
    let mut total_variation = 0.0;
    for (p, lam) in ts.pieces().iter().zip(&piece_density) {
        let len = p.end.min(horizon) - p.start;
        if len > 0.0 {
            total_variation += lam.abs() * p.density * len;
        }
    }
    let mut atom_jumps = Vec::new();
    let mut product = 1.0;
    for (atom, c) in ts.atoms().iter().zip(env.atom_coeffs()) {
        if atom.time > horizon {
            break;
        }
        let delta_alpha = lambda_density(c, upper, f, h, eps, eta) * atom.mass;
        if delta_alpha <= -1.0 {
            return Err(CumulantError::AtomJumpTooNegative {
                time: atom.time,
                delta_alpha,
            });
        }
        total_variation += delta_alpha.abs();
        product *= 1.0 + delta_alpha.min(0.0);
        atom_jumps.push((atom.time, delta_alpha));
    }
    let lower = 0.5 * a * product * (-total_variation).exp();
    Ok(EnvelopeConstants {
        horizon,
        a,
        b,
        eta,
        c0,
        upper,
        lower,
        f,
        h,
        eps,
        piece_density,
        atom_jumps,
        total_variation,
        env: Some(env.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{EnvironmentBuilder, JumpKernel};

    fn constant(b1: f64, c: f64) -> EnvironmentSpec {
        EnvironmentBuilder::new(1.0)
            .piece(0.0, 1.0, 1.0, Coefficients::new(b1, c, JumpKernel::zero()))
            .build()
            .unwrap()
    }

    #[test]
    fn empty_interval_returns_lambda() {
        let env = constant(0.3, 0.7);
        assert_eq!(solve_backward(&env, 0.4, 0.4, 5.0, 1e-10).unwrap().value, 5.0);
    }

    #[test]
    fn linear_and_riccati_oracles() {
        let v = solve_backward(&constant(1.0, 0.0), 0.0, 1.0, 1.0, 1e-10).unwrap();
        assert!((v.value - (-1.0f64).exp()).abs() < 1e-9);
        let v = solve_backward(&constant(0.0, 1.0), 0.0, 1.0, 1.0, 1e-10).unwrap();
        assert!((v.value - 0.5).abs() < 1e-9);
        assert!(v.error < 1e-9);
    }

    #[test]
    fn single_atom_step() {
        let env = EnvironmentBuilder::new(2.0)
            .atom(1.0, 1.0, Coefficients::drift(0.5))
            .build()
            .unwrap();
        assert_eq!(solve_backward(&env, 0.0, 2.0, 2.0, 1e-10).unwrap().value, 1.0);
        // atom at r is excluded, atom at t is included
        assert_eq!(solve_backward(&env, 1.0, 2.0, 2.0, 1e-10).unwrap().value, 2.0);
        assert_eq!(solve_backward(&env, 0.5, 1.0, 2.0, 1e-10).unwrap().value, 1.0);
    }

    #[test]
    fn negative_cumulant_is_an_error() {
        let env = EnvironmentBuilder::new(1.0)
            .atom(0.5, 1.0, Coefficients::drift(1.5))
            .build()
            .unwrap();
        assert!(matches!(
            solve_backward(&env, 0.0, 1.0, 1.0, 1e-10),
            Err(CumulantError::NegativeCumulant { .. })
        ));
    }

    #[test]
    fn laplace_conventions() {
        let env = constant(0.0, 1.0);
        assert_eq!(transition_laplace(&env, 0.0, 0.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(transition_laplace(&env, f64::INFINITY, 0.0, 1.0, 1.0).unwrap(), 0.0);
        let x = transition_laplace(&env, 1.0, 0.0, 1.0, 1.0).unwrap();
        assert!((x - (-0.5f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn envelope_examples() {
        let env = constant(1.0, 0.0);
        let e = envelope_bounds(&env, 1.0, 1.0, 1.0, 2.0).unwrap();
        assert!((e.upper - 3.0 * std::f64::consts::E).abs() < 1e-12);
        assert!((e.lower - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((e.alpha(0.3) + 0.3).abs() < 1e-15);
        assert!((e.total_variation - 1.0).abs() < 1e-15);
        let unit_f = -(-1.0f64).exp_m1();
        assert!((unit_f - 0.632_120_6).abs() < 1e-7);
    }

    #[test]
    fn path_matches_individual_solves() {
        let env = EnvironmentBuilder::new(1.0)
            .piece(0.0, 1.0, 1.0, Coefficients::new(0.2, 0.5, JumpKernel::atomic(&[(0.5, 0.3), (2.0, 0.2)])))
            .atom(0.4, 0.3, Coefficients::drift(1.0))
            .build()
            .unwrap();
        let rs = [0.0, 0.4, 0.2, 0.9];
        let path = solve_path(&env, 1.0, 1.5, &rs, &SolverOptions::default()).unwrap();
        for (r, p) in rs.iter().zip(&path) {
            let single = solve_backward(&env, *r, 1.0, 1.5, 1e-10).unwrap();
            assert!((single.value - p.value).abs() < 1e-10);
        }
    }
}
