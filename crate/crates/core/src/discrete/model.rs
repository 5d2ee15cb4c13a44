//! Galton–Watson approximation at level `k`: one pgf per generation.

use std::collections::HashMap;

use serde::Serialize;

use super::pgf::{Component, Pgf};
use super::DiscreteError;
use crate::environment::{
    compute_c0, discretize_time, Coefficients, DiscreteTimeScale, EnvironmentBuilder, EnvironmentSpec,
    GenerationKind, JumpKernel, Part,
};
use crate::mechanism::{drift_of, jump_cutoff};

pub const DEFAULT_THETA: f64 = 0.5;
/// Coefficients above `-COEFFICIENT_TOLERANCE` count as nonnegative.
pub const COEFFICIENT_TOLERANCE: f64 = 1e-14;
/// A cell whose γ-mass is this close (relative) to `1/β` gets exactly `1/β`.
const CELL_MASS_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Cell,
    AtomStep,
    Identity,
}

/// A generation whose constructed pgf had a negative coefficient and was
/// replaced by the identity.
#[derive(Debug, Clone, Serialize)]
pub struct Downgrade {
    pub generation: usize,
    pub role: Role,
    pub time: f64,
    pub min_coefficient: f64,
}

#[derive(Debug, Clone)]
pub struct DiscreteModel {
    k: u64,
    theta: f64,
    cutoff: f64,
    time: DiscreteTimeScale,
    /// Distinct pgfs; slot 0 is the identity.
    pgfs: Vec<Pgf>,
    slots: Vec<u32>,
    roles: Vec<Role>,
    downgrades: Vec<Downgrade>,
}

#[derive(PartialEq, Eq, Hash)]
enum PgfKey {
    Cell(Vec<(bool, usize, u64)>),
    Atom(usize),
}

fn cell_pgf(env: &EnvironmentSpec, parts: &[(Part, f64)], k: f64, beta: f64, cutoff: f64) -> Pgf {
    let q = k.cbrt() / beta;
    let mut drift = 0.0;
    let mut diffusion = 0.0;
    let mut g = Pgf::quadratic(0.0, 0.0, 0.0);
    for &(part, mass) in parts {
        let coeffs = env.coeffs(part);
        drift += mass * drift_of(coeffs, cutoff);
        diffusion += mass * coeffs.c;
        let hi = cutoff.max(0.0);
        match &coeffs.kernel {
            JumpKernel::Atomic { atoms } => {
                for atom in atoms.iter().filter(|a| a.z > 0.0 && a.z <= hi && a.w > 0.0) {
                    let weight = mass * atom.w / k;
                    let rate = k * atom.z;
                    g.constant += weight * (rate - 1.0);
                    g.linear -= weight * rate;
                    g.components.push(Component::Poisson { weight, rate });
                }
            }
            JumpKernel::PowerLaw(law) => {
                let lo = law.zmin;
                let top = law.zmax.min(hi);
                if top > lo && law.scale > 0.0 {
                    g.components.push(Component::JumpFamily {
                        weight: mass,
                        level: k,
                        law: *law,
                        lo,
                        hi: top,
                        compensated: true,
                    });
                }
            }
        }
    }
    let ck = diffusion * k;
    g.constant += ck + q + drift;
    g.linear += 1.0 - 2.0 * q - drift - 2.0 * ck;
    g.quadratic += ck + q;
    g
}

/// `δ_k(θ, s) = [b1 + ∫_(k^{-θ}, 1] z m(dz)] Δγ(s)`.
pub fn atom_delta(coeffs: &Coefficients, mass: f64, k: u64, theta: f64) -> f64 {
    let small = (k as f64).powf(-theta);
    (coeffs.b1 + coeffs.kernel.moment(1.0, small, 1.0)) * mass
}

fn atom_step_pgf(coeffs: &Coefficients, mass: f64, k: u64, theta: f64) -> Pgf {
    let kf = k as f64;
    let small = kf.powf(-theta);
    let delta = atom_delta(coeffs, mass, k, theta);
    let mut g = Pgf::poisson(1.0 - delta);
    match &coeffs.kernel {
        JumpKernel::Atomic { atoms } => {
            for atom in atoms.iter().filter(|a| a.z > small && a.w > 0.0) {
                let weight = mass * atom.w / kf;
                g.constant -= weight;
                g.components.push(Component::Poisson {
                    weight,
                    rate: kf * atom.z,
                });
            }
        }
        JumpKernel::PowerLaw(law) => {
            let lo = law.zmin.max(small);
            if law.zmax > lo && law.scale > 0.0 {
                g.components.push(Component::JumpFamily {
                    weight: mass,
                    level: kf,
                    law: *law,
                    lo,
                    hi: law.zmax,
                    compensated: false,
                });
            }
        }
    }
    g
}

/// Builds the level-`k` model of `env` with small-jump threshold `k^{-θ}` at atoms.
pub fn build_discrete_model(env: &EnvironmentSpec, k: u64, theta: f64) -> Result<DiscreteModel, DiscreteError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(DiscreteError::InvalidArgument(format!("θ = {theta} must lie in (0, 1)")));
    }
    let c0 = compute_c0(env)?;
    let time = discretize_time(env, k, c0)?;
    let kf = k as f64;
    let beta = time.beta();
    let cutoff = jump_cutoff(k, c0);
    let ts = env.timescale();

    let mut model = DiscreteModel {
        k,
        theta,
        cutoff,
        time,
        pgfs: vec![Pgf::identity()],
        slots: Vec::new(),
        roles: Vec::new(),
        downgrades: Vec::new(),
    };
    let mut cache: HashMap<PgfKey, (u32, f64)> = HashMap::new();
    for n in 0..model.time.generations() {
        let kind = model.time.kind(n);
        let (role, key, payload) = match kind {
            GenerationKind::Identity { .. } => {
                model.slots.push(0);
                model.roles.push(Role::Identity);
                continue;
            }
            GenerationKind::Cell { left, right } => {
                let mut parts = ts.open_parts(left, right);
                if let [(Part::Piece(_), mass)] = parts.as_mut_slice() {
                    if (*mass * beta - 1.0).abs() <= CELL_MASS_SNAP {
                        *mass = 1.0 / beta;
                    }
                }
                let key = parts
                    .iter()
                    .map(|&(p, m)| match p {
                        Part::Piece(i) => (false, i, m.to_bits()),
                        Part::Atom(j) => (true, j, m.to_bits()),
                    })
                    .collect();
                (Role::Cell, PgfKey::Cell(key), (parts, right))
            }
            GenerationKind::AtomStep { time } => {
                let j = ts.atom_at(time).ok_or_else(|| {
                    DiscreteError::InvalidArgument(format!("atom step at {time} without an atom"))
                })?;
                (Role::AtomStep, PgfKey::Atom(j), (Vec::new(), time))
            }
        };
        let (parts, at) = payload;
        let (slot, min_coefficient) = match cache.get(&key) {
            Some(&entry) => entry,
            None => {
                let g = match &key {
                    PgfKey::Cell(_) => cell_pgf(env, &parts, kf, beta, cutoff),
                    &PgfKey::Atom(j) => atom_step_pgf(&env.atom_coeffs()[j], ts.atoms()[j].mass, k, theta),
                };
                let min_coefficient = g.min_coefficient();
                let valid = min_coefficient >= -COEFFICIENT_TOLERANCE && (g.total() - 1.0).abs() <= 1e-12;
                let slot = if valid {
                    model.pgfs.push(g);
                    (model.pgfs.len() - 1) as u32
                } else {
                    0
                };
                cache.insert(key, (slot, min_coefficient));
                (slot, min_coefficient)
            }
        };
        if slot == 0 {
            model.downgrades.push(Downgrade {
                generation: n,
                role,
                time: at,
                min_coefficient,
            });
        }
        model.slots.push(slot);
        model.roles.push(role);
    }
    Ok(model)
}

impl DiscreteModel {
    /// Model with the given pgfs on generations `0..pgfs.len()` and `γ_k(t) = ⌊t⌋`.
    /// Meant for checks with hand-made offspring laws.
    pub fn from_pgfs(k: u64, pgfs: Vec<Pgf>) -> Result<Self, DiscreteError> {
        if k == 0 || pgfs.is_empty() {
            return Err(DiscreteError::InvalidArgument("need k >= 1 and at least one pgf".into()));
        }
        let horizon = pgfs.len() as f64;
        let env = EnvironmentBuilder::new(horizon)
            .piece(0.0, horizon, 1.0, Coefficients::default())
            .build()?;
        // β = 4 C0 (k + 1) = 1
        let time = discretize_time(&env, k, 0.25 / (k as f64 + 1.0))?;
        let mut model = DiscreteModel {
            k,
            theta: DEFAULT_THETA,
            cutoff: f64::INFINITY,
            time,
            pgfs: vec![Pgf::identity()],
            slots: Vec::new(),
            roles: Vec::new(),
            downgrades: Vec::new(),
        };
        for g in pgfs {
            if g.is_identity() {
                model.slots.push(0);
                model.roles.push(Role::Identity);
            } else {
                model.pgfs.push(g);
                model.slots.push((model.pgfs.len() - 1) as u32);
                model.roles.push(Role::Cell);
            }
        }
        Ok(model)
    }

    pub fn level(&self) -> u64 {
        self.k
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn c0(&self) -> f64 {
        self.time.c0()
    }

    pub fn beta(&self) -> f64 {
        self.time.beta()
    }

    /// `c_k`.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn time(&self) -> &DiscreteTimeScale {
        &self.time
    }

    /// `γ_k(T)`.
    pub fn generations(&self) -> usize {
        self.slots.len()
    }

    pub fn pgf(&self, n: usize) -> &Pgf {
        &self.pgfs[self.slots[n] as usize]
    }

    pub fn role(&self, n: usize) -> Role {
        self.roles[n]
    }

    /// Distinct non-identity pgfs with one generation using each.
    pub fn distinct_pgfs(&self) -> Vec<(usize, &Pgf)> {
        let mut seen = vec![false; self.pgfs.len()];
        seen[0] = true;
        let mut out = Vec::new();
        for (n, &slot) in self.slots.iter().enumerate() {
            let slot = slot as usize;
            if !seen[slot] {
                seen[slot] = true;
                out.push((n, &self.pgfs[slot]));
            }
        }
        out
    }

    pub fn downgrades(&self) -> &[Downgrade] {
        &self.downgrades
    }

    fn check_range(&self, m: usize, n: usize) -> Result<(), DiscreteError> {
        if m > n || n > self.generations() {
            return Err(DiscreteError::InvalidArgument(format!(
                "generation range {m}..{n} outside 0..={}",
                self.generations()
            )));
        }
        Ok(())
    }

    /// `1 - g_{m,n}(1 - y)`: deficits composed right to left.
    pub fn compose_deficit(&self, m: usize, n: usize, y: f64) -> Result<f64, DiscreteError> {
        self.check_range(m, n)?;
        let mut y = y;
        for i in (m..n).rev() {
            let slot = self.slots[i] as usize;
            if slot != 0 {
                y = self.pgfs[slot].deficit(y);
            }
        }
        Ok(y)
    }

    fn check_times(&self, r: f64, t: f64, lambda: f64) -> Result<(), DiscreteError> {
        let horizon = self.time.timescale().horizon();
        if !(0.0 <= r && r <= t && t <= horizon) {
            return Err(DiscreteError::InvalidArgument(format!(
                "need 0 <= r <= t <= {horizon}, got r = {r}, t = {t}"
            )));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(DiscreteError::InvalidArgument(format!("λ = {lambda} must be finite and non-negative")));
        }
        Ok(())
    }

    fn cumulant_of(&self, y: f64) -> Result<f64, DiscreteError> {
        if !(y < 1.0) || y.is_nan() {
            return Err(DiscreteError::ImproperComposition { value: 1.0 - y });
        }
        Ok(-(self.k as f64) * (-y).ln_1p())
    }

    /// `v_k(r, t; λ) = -k log g_{γ_k(r), γ_k(t)}(e^{-λ/k})`.
    pub fn cumulant(&self, r: f64, t: f64, lambda: f64) -> Result<f64, DiscreteError> {
        self.check_times(r, t, lambda)?;
        let kf = self.k as f64;
        let start = self.time.gamma_k(r).min(self.generations());
        let end = self.time.gamma_k(t).min(self.generations());
        if start == end {
            return Ok(lambda);
        }
        let y = self.compose_deficit(start, end, -(-lambda / kf).exp_m1())?;
        self.cumulant_of(y)
    }

    /// `v_k` from every generation `m <= γ_k(t)` to `γ_k(t)`, indexed by `m`.
    pub fn cumulant_path(&self, t: f64, lambda: f64) -> Result<Vec<f64>, DiscreteError> {
        self.check_times(0.0, t, lambda)?;
        let end = self.time.gamma_k(t).min(self.generations());
        let mut out = vec![0.0; end + 1];
        out[end] = lambda;
        let mut y = -(-lambda / self.k as f64).exp_m1();
        let mut last = lambda;
        for m in (0..end).rev() {
            let slot = self.slots[m] as usize;
            if slot != 0 {
                y = self.pgfs[slot].deficit(y);
                last = self.cumulant_of(y)?;
            }
            out[m] = last;
        }
        Ok(out)
    }
}

fn check_unit(u: f64) -> Result<(), DiscreteError> {
    if !(0.0..=1.0).contains(&u) {
        return Err(DiscreteError::InvalidArgument(format!("argument {u} outside [0, 1]")));
    }
    Ok(())
}

/// `g(u)` for `u ∈ [0, 1]`.
pub fn pgf_eval(g: &Pgf, u: f64) -> Result<f64, DiscreteError> {
    check_unit(u)?;
    Ok(g.eval(u))
}

/// `g_{m,n}(u) = g_m(g_{m+1}(⋯ g_{n-1}(u)))`.
pub fn pgf_compose_eval(model: &DiscreteModel, m: usize, n: usize, u: f64) -> Result<f64, DiscreteError> {
    check_unit(u)?;
    model.check_range(m, n)?;
    let mut u = u;
    for i in (m..n).rev() {
        let slot = model.slots[i] as usize;
        if slot != 0 {
            u = model.pgfs[slot].eval(u);
        }
    }
    Ok(u)
}

pub fn discrete_cumulant(model: &DiscreteModel, r: f64, t: f64, lambda: f64) -> Result<f64, DiscreteError> {
    model.cumulant(r, t, lambda)
}

/// Which generations around a jump time `s` a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// The generation `γ_k(s-)` ending at `s`.
    Cell,
    /// Generations `γ_k(s-) + 1 .. γ_k(s)` inside the jump at `s`.
    Jump,
}

fn stage_range(model: &DiscreteModel, s: f64, lambda: f64, stage: Stage) -> Result<(usize, usize), DiscreteError> {
    let kf = model.k as f64;
    if !(lambda >= 0.0 && lambda <= kf) {
        return Err(DiscreteError::InvalidArgument(format!("need 0 <= λ <= k = {}, got {lambda}", model.k)));
    }
    let horizon = model.time.timescale().horizon();
    if !(s > 0.0 && s <= horizon) {
        return Err(DiscreteError::InvalidArgument(format!("time {s} outside (0, {horizon}]")));
    }
    let before = model.time.gamma_k_left(s);
    match stage {
        Stage::Cell => {
            if before >= model.generations() {
                return Err(DiscreteError::InvalidArgument(format!("no generation starts before {s}")));
            }
            Ok((before, before + 1))
        }
        Stage::Jump => {
            let after = model.time.gamma_k(s).min(model.generations());
            Ok(((before + 1).min(after), after))
        }
    }
}

/// `Φ_k(s, λ) = k [g(1 - λ/k) - (1 - λ/k)]` for the generations selected by `stage`.
pub fn big_phi(model: &DiscreteModel, s: f64, lambda: f64, stage: Stage) -> Result<f64, DiscreteError> {
    let (m, n) = stage_range(model, s, lambda, stage)?;
    if (m..n).all(|i| model.slots[i] == 0) {
        return Ok(0.0);
    }
    if n == m + 1 {
        return Ok(model.pgfs[model.slots[m] as usize].excess(lambda, model.k as f64));
    }
    let kf = model.k as f64;
    Ok(lambda - kf * model.compose_deficit(m, n, lambda / kf)?)
}

/// `φ_k(s, λ) = λ + k log g(e^{-λ/k})` for the generations selected by `stage`.
pub fn small_phi(model: &DiscreteModel, s: f64, lambda: f64, stage: Stage) -> Result<f64, DiscreteError> {
    let (m, n) = stage_range(model, s, lambda, stage)?;
    if (m..n).all(|i| model.slots[i] == 0) {
        return Ok(0.0);
    }
    let kf = model.k as f64;
    let y = model.compose_deficit(m, n, -(-lambda / kf).exp_m1())?;
    if !(y < 1.0) {
        return Err(DiscreteError::ImproperComposition { value: 1.0 - y });
    }
    Ok(lambda + kf * (-y).ln_1p())
}

/// `φ_k` through `k log[1 + (e^{λ/k}/k) Φ_k(s, k(1 - e^{-λ/k}))]`.
pub fn small_phi_via_big(model: &DiscreteModel, s: f64, lambda: f64, stage: Stage) -> Result<f64, DiscreteError> {
    let kf = model.k as f64;
    let h = -kf * (-lambda / kf).exp_m1();
    let big = big_phi(model, s, h, stage)?;
    Ok(kf * ((lambda / kf).exp() * big / kf).ln_1p())
}

/// `h_k(z) = k (1 - e^{-z/k})`.
pub fn h_k(k: u64, z: f64) -> f64 {
    let kf = k as f64;
    -kf * (-z / kf).exp_m1()
}
