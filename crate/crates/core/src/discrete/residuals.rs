//! Per-jump residuals between generating-function increments and the
//! integrated mechanism, with their analytic bounds.

use serde::Serialize;

use super::model::{atom_delta, big_phi, DiscreteModel, Stage};
use super::DiscreteError;
use crate::environment::{EnvironmentSpec, Part};
use crate::mechanism::phi_of;

#[derive(Debug, Clone, Serialize)]
pub struct JumpResidual {
    pub time: f64,
    /// `γ_k(time-)`.
    pub before: usize,
    /// `Δγ_k(time)`.
    pub size: usize,
    /// Cell residual per λ of the grid.
    pub cell: Vec<f64>,
    /// Jump residual per λ of the grid.
    pub jump: Vec<f64>,
    /// `sup_λ (|cell| + |jump|)`.
    pub sup: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualTable {
    pub k: u64,
    pub r: f64,
    pub t: f64,
    /// Largest λ of the grid.
    pub cap: f64,
    pub lambdas: Vec<f64>,
    pub jumps: Vec<JumpResidual>,
    /// `Σ_s sup_λ (|cell| + |jump|)`.
    pub total: f64,
    pub cell_total: f64,
    pub jump_total: f64,
    /// Analytic bound on the summed cell residuals.
    pub cell_bound: f64,
    /// Analytic bound on the summed jump residuals.
    pub jump_bound: f64,
}

/// `∫_(a,b) φ(u, λ) γ(du)`.
pub fn mechanism_integral(env: &EnvironmentSpec, a: f64, b: f64, lambda: f64) -> f64 {
    env.timescale()
        .open_parts(a, b)
        .into_iter()
        .map(|(part, mass)| mass * phi_of(env.coeffs(part), lambda))
        .sum()
}

/// Residuals for every jump time of `γ_k` in `(r, t]` and every λ of the grid.
pub fn condition_a_residuals(
    model: &DiscreteModel,
    env: &EnvironmentSpec,
    r: f64,
    t: f64,
    lambdas: &[f64],
) -> Result<ResidualTable, DiscreteError> {
    let horizon = env.horizon();
    if !(0.0 <= r && r <= t && t <= horizon) {
        return Err(DiscreteError::InvalidArgument(format!("need 0 <= r <= t <= {horizon}")));
    }
    let kf = model.level() as f64;
    if lambdas.iter().any(|&l| !(0.0..=kf).contains(&l)) {
        return Err(DiscreteError::InvalidArgument(format!("λ grid must lie in [0, k = {kf}]")));
    }
    let cap = lambdas.iter().copied().fold(0.0, f64::max);
    let time = model.time();
    let ts = env.timescale();

    let mut jumps = Vec::new();
    let mut cell_total = 0.0;
    let mut jump_total = 0.0;
    let mut total = 0.0;
    for jump in time.jumps(r, t) {
        let left = time.inverse(jump.before);
        let atom = ts.atom_at(jump.time);
        let atom_mass = atom.map_or(0.0, |j| ts.atoms()[j].mass);
        let mut cell = Vec::with_capacity(lambdas.len());
        let mut at_jump = Vec::with_capacity(lambdas.len());
        let (mut sup, mut sup_cell, mut sup_jump) = (0.0f64, 0.0f64, 0.0f64);
        for &lambda in lambdas {
            let i1 = big_phi(model, jump.time, lambda, Stage::Cell)? - mechanism_integral(env, left, jump.time, lambda);
            let phi_atom = atom.map_or(0.0, |j| phi_of(&env.atom_coeffs()[j], lambda) * atom_mass);
            let i2 = big_phi(model, jump.time, lambda, Stage::Jump)? - phi_atom;
            sup = sup.max(i1.abs() + i2.abs());
            sup_cell = sup_cell.max(i1.abs());
            sup_jump = sup_jump.max(i2.abs());
            cell.push(i1);
            at_jump.push(i2);
        }
        total += sup;
        cell_total += sup_cell;
        jump_total += sup_jump;
        jumps.push(JumpResidual {
            time: jump.time,
            before: jump.before,
            size: jump.size,
            cell,
            jump: at_jump,
            sup,
        });
    }
    let (cell_bound, jump_bound) = residual_bounds(model, env, r, t, cap);
    Ok(ResidualTable {
        k: model.level(),
        r,
        t,
        cap,
        lambdas: lambdas.to_vec(),
        jumps,
        total,
        cell_total,
        jump_total,
        cell_bound,
        jump_bound,
    })
}

/// Analytic bounds on the summed cell and jump residuals over `(r, t]` for `λ <= cap`.
pub fn residual_bounds(model: &DiscreteModel, env: &EnvironmentSpec, r: f64, t: f64, cap: f64) -> (f64, f64) {
    let time = model.time();
    let ts = env.timescale();
    let kf = model.level() as f64;
    let beta = model.beta();
    let (gr, gt) = (time.gamma_k(r), time.gamma_k(t));

    // γ(du) m(u, (c_k, ∞)) over (γ_k^{-1}(γ_k(r)), γ_k^{-1}(γ_k(t))]
    let (a, b) = (time.inverse(gr), time.inverse(gt));
    let cutoff = model.cutoff().max(0.0);
    let mut parts = ts.open_parts(a, b);
    if b > a {
        if let Some(j) = ts.atom_at(b) {
            parts.push((Part::Atom(j), ts.atoms()[j].mass));
        }
    }
    let tail: f64 = parts
        .iter()
        .map(|&(part, mass)| mass * env.coeffs(part).kernel.tail_mass(cutoff))
        .sum();
    let cells = if gt > gr {
        cap * cap * (gt - gr) as f64 / (kf.powf(2.0 / 3.0) * beta)
    } else {
        0.0
    };
    let cell_bound = tail + cells;

    let small = kf.powf(-model.theta());
    let mut jump_bound = 0.0;
    for jump in time.jumps(r, t).into_iter().filter(|j| j.size >= 2) {
        if let Some(j) = ts.atom_at(jump.time) {
            let coeffs = &env.atom_coeffs()[j];
            let mass = ts.atoms()[j].mass;
            let delta = atom_delta(coeffs, mass, model.level(), model.theta());
            jump_bound += 0.5 * cap * cap * (1.0 - delta).powi(2) / kf;
            jump_bound += 0.5 * cap * cap * coeffs.kernel.moment(2.0, 0.0, small) * mass;
        }
    }
    let light: f64 = ts
        .atoms()
        .iter()
        .filter(|x| x.time > r && x.time <= t && x.mass <= 2.0 / beta)
        .map(|x| x.mass)
        .sum();
    jump_bound += model.c0() * (1.0 + cap).powi(2) * light;
    (cell_bound, jump_bound)
}
