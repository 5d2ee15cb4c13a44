//! Time scales, characteristic coefficients and admissibility checks.

mod canonical;
mod discrete_time;
pub mod kernel;
mod timescale;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{integrate, QuadratureError, Tolerance};
use crate::special::exp_compensated_ratio;

pub use canonical::{canonicalize, RawAtom, RawPiece, RawTriplet};
pub use discrete_time::{discretize_time, DiscreteJump, DiscreteTimeScale, GenerationKind, SNAP_TOLERANCE};
pub use kernel::{kfun, JumpKernel, KernelAtom, PowerLaw};
pub use timescale::{DensityPiece, Part, ScaleAtom, TimeScale};

/// Tolerance used when comparing `b1·Δγ` or the drift bound against 1.
pub const ATOM_UNIT_TOLERANCE: f64 = 1e-12;
/// Default absolute tolerance for quadrature-based kernel moments.
pub const MOMENT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Location {
    Piece(usize),
    Atom(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Piece(i) => write!(f, "piece {i}"),
            Location::Atom(j) => write!(f, "atom {j}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum EnvironmentError {
    #[error("invalid time scale: {0}")]
    InvalidTimeScale(String),
    #[error("invalid coefficients at {location}: {reason}")]
    InvalidCoefficients { location: Location, reason: String },
    #[error("inconsistent triplet: {0}")]
    InconsistentTriplet(String),
    #[error("moment diverges: {0}")]
    DivergentMoment(String),
    #[error("moment quadrature failed: {0}")]
    Quadrature(#[from] QuadratureError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Coefficients `(b1, c, m)` of the branching mechanism on one piece or atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Coefficients {
    #[serde(default)]
    pub b1: f64,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub kernel: JumpKernel,
}

impl Coefficients {
    pub fn new(b1: f64, c: f64, kernel: JumpKernel) -> Self {
        Self { b1, c, kernel }
    }

    pub fn drift(b1: f64) -> Self {
        Self::new(b1, 0.0, JumpKernel::zero())
    }

    /// `|b1| + c + ∫ (1 ∧ z²) m(dz)`.
    pub fn size(&self) -> f64 {
        self.b1.abs() + self.c + self.kernel.integrable_mass()
    }

    fn check(&self, location: Location) -> Result<(), EnvironmentError> {
        if !self.b1.is_finite() || !self.c.is_finite() {
            return Err(EnvironmentError::InvalidCoefficients {
                location,
                reason: "drift and diffusion must be finite".into(),
            });
        }
        self.kernel
            .check()
            .map_err(|reason| EnvironmentError::InvalidCoefficients { location, reason })
    }
}

/// A time scale together with coefficients for each of its pieces and atoms.
#[derive(Debug, Clone)]
pub struct EnvironmentSpec {
    timescale: TimeScale,
    piece_coeffs: Vec<Coefficients>,
    atom_coeffs: Vec<Coefficients>,
    zero: Coefficients,
}

impl EnvironmentSpec {
    pub fn new(
        timescale: TimeScale,
        piece_coeffs: Vec<Coefficients>,
        atom_coeffs: Vec<Coefficients>,
    ) -> Result<Self, EnvironmentError> {
        if piece_coeffs.len() != timescale.pieces().len() || atom_coeffs.len() != timescale.atoms().len() {
            return Err(EnvironmentError::InvalidArgument(format!(
                "expected {} piece and {} atom coefficient sets, got {} and {}",
                timescale.pieces().len(),
                timescale.atoms().len(),
                piece_coeffs.len(),
                atom_coeffs.len()
            )));
        }
        for (i, c) in piece_coeffs.iter().enumerate() {
            c.check(Location::Piece(i))?;
        }
        for (j, c) in atom_coeffs.iter().enumerate() {
            c.check(Location::Atom(j))?;
        }
        Ok(Self {
            timescale,
            piece_coeffs,
            atom_coeffs,
            zero: Coefficients::default(),
        })
    }

    pub fn timescale(&self) -> &TimeScale {
        &self.timescale
    }

    pub fn horizon(&self) -> f64 {
        self.timescale.horizon()
    }

    pub fn piece_coeffs(&self) -> &[Coefficients] {
        &self.piece_coeffs
    }

    pub fn atom_coeffs(&self) -> &[Coefficients] {
        &self.atom_coeffs
    }

    pub fn coeffs(&self, part: Part) -> &Coefficients {
        match part {
            Part::Piece(i) => &self.piece_coeffs[i],
            Part::Atom(j) => &self.atom_coeffs[j],
        }
    }

    /// Coefficients in force at `s`: the atom's if `s` carries one, else the piece's.
    /// Times outside every piece carry no mass and get zero coefficients.
    pub fn coeffs_at(&self, s: f64) -> &Coefficients {
        if let Some(j) = self.timescale.atom_at(s) {
            return &self.atom_coeffs[j];
        }
        match self.timescale.piece_at(s) {
            Some(i) => &self.piece_coeffs[i],
            None => &self.zero,
        }
    }

    /// Serializable description of this environment.
    pub fn describe(&self) -> EnvironmentDescription {
        EnvironmentDescription {
            horizon: self.horizon(),
            pieces: self
                .timescale
                .pieces()
                .iter()
                .zip(&self.piece_coeffs)
                .map(|(p, c)| PieceDescription {
                    start: p.start,
                    end: p.end,
                    density: p.density,
                    coefficients: c.clone(),
                })
                .collect(),
            atoms: self
                .timescale
                .atoms()
                .iter()
                .zip(&self.atom_coeffs)
                .map(|(a, c)| AtomDescription {
                    time: a.time,
                    mass: a.mass,
                    coefficients: c.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceDescription {
    pub start: f64,
    pub end: f64,
    #[serde(alias = "gamma_density")]
    pub density: f64,
    #[serde(flatten)]
    pub coefficients: Coefficients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomDescription {
    pub time: f64,
    pub mass: f64,
    #[serde(flatten)]
    pub coefficients: Coefficients,
}

/// Plain-data form of an [`EnvironmentSpec`], used by configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentDescription {
    pub horizon: f64,
    #[serde(default)]
    pub pieces: Vec<PieceDescription>,
    #[serde(default)]
    pub atoms: Vec<AtomDescription>,
}

impl EnvironmentDescription {
    pub fn build(&self) -> Result<EnvironmentSpec, EnvironmentError> {
        let timescale = TimeScale::new(
            self.horizon,
            self.pieces
                .iter()
                .map(|p| DensityPiece {
                    start: p.start,
                    end: p.end,
                    density: p.density,
                })
                .collect(),
            self.atoms
                .iter()
                .map(|a| ScaleAtom {
                    time: a.time,
                    mass: a.mass,
                })
                .collect(),
        )?;
        EnvironmentSpec::new(
            timescale,
            self.pieces.iter().map(|p| p.coefficients.clone()).collect(),
            self.atoms.iter().map(|a| a.coefficients.clone()).collect(),
        )
    }
}

/// Incremental construction of an [`EnvironmentSpec`].
#[derive(Debug, Clone)]
pub struct EnvironmentBuilder {
    description: EnvironmentDescription,
}

impl EnvironmentBuilder {
    pub fn new(horizon: f64) -> Self {
        Self {
            description: EnvironmentDescription {
                horizon,
                pieces: Vec::new(),
                atoms: Vec::new(),
            },
        }
    }

    pub fn piece(mut self, start: f64, end: f64, density: f64, coefficients: Coefficients) -> Self {
        self.description.pieces.push(PieceDescription {
            start,
            end,
            density,
            coefficients,
        });
        self
    }

    pub fn atom(mut self, time: f64, mass: f64, coefficients: Coefficients) -> Self {
        self.description.atoms.push(AtomDescription {
            time,
            mass,
            coefficients,
        });
        self
    }

    pub fn build(self) -> Result<EnvironmentSpec, EnvironmentError> {
        self.description.build()
    }
}

/// Which admissibility requirement a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    /// Diffusion is non-negative and vanishes on atoms.
    Diffusion,
    /// `[b1 + ∫_(0,1] z m(dz)] Δγ <= 1` on atoms.
    AtomDriftBound,
    /// Atoms with `b1 Δγ = 1` must carry jumps larger than 1.
    AtomLargeJumps,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub condition: Condition,
    pub location: Location,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `δ(s) = [b1 + ∫_(0,1] z m(dz)] Δγ(s)` for atom `j`.
pub fn atom_drift(env: &EnvironmentSpec, j: usize) -> f64 {
    let c = &env.atom_coeffs[j];
    let mass = env.timescale.atoms()[j].mass;
    (c.b1 + c.kernel.moment(1.0, 0.0, 1.0)) * mass
}

/// Checks the admissibility conditions; every failure becomes a report entry.
pub fn validate_admissible(env: &EnvironmentSpec) -> ValidationReport {
    let mut violations = Vec::new();
    for (i, c) in env.piece_coeffs.iter().enumerate() {
        if c.c < 0.0 {
            violations.push(Violation {
                condition: Condition::Diffusion,
                location: Location::Piece(i),
                detail: format!("diffusion coefficient {} is negative", c.c),
            });
        }
    }
    for (j, c) in env.atom_coeffs.iter().enumerate() {
        let atom = env.timescale.atoms()[j];
        if c.c * atom.mass != 0.0 {
            violations.push(Violation {
                condition: Condition::Diffusion,
                location: Location::Atom(j),
                detail: format!("atom at {} carries diffusion {}", atom.time, c.c),
            });
        }
        let delta = atom_drift(env, j);
        if !(delta <= 1.0 + ATOM_UNIT_TOLERANCE) {
            violations.push(Violation {
                condition: Condition::AtomDriftBound,
                location: Location::Atom(j),
                detail: format!("atom at {} has drift mass {delta} > 1", atom.time),
            });
        }
        if (c.b1 * atom.mass - 1.0).abs() <= ATOM_UNIT_TOLERANCE && !(c.kernel.tail_mass(1.0) * atom.mass > 0.0) {
            violations.push(Violation {
                condition: Condition::AtomLargeJumps,
                location: Location::Atom(j),
                detail: format!("atom at {} kills all mass but has no jumps above 1", atom.time),
            });
        }
    }
    ValidationReport { violations }
}

/// Atoms with `b1 Δγ = 1` whose jumps above 1 all exceed `eta`.
pub fn check_jump_reach(env: &EnvironmentSpec, eta: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for (j, c) in env.atom_coeffs.iter().enumerate() {
        let atom = env.timescale.atoms()[j];
        if (c.b1 * atom.mass - 1.0).abs() <= ATOM_UNIT_TOLERANCE && !(c.kernel.mass(1.0, eta) * atom.mass > 0.0) {
            out.push(Violation {
                condition: Condition::AtomLargeJumps,
                location: Location::Atom(j),
                detail: format!("atom at {} has no jump mass in (1, {eta}]", atom.time),
            });
        }
    }
    out
}

/// `sup_s [ |b1(s)| + c(s) + ∫ (1 ∧ z²) m(s, dz) ]` over all pieces and atoms.
pub fn compute_c0(env: &EnvironmentSpec) -> Result<f64, EnvironmentError> {
    let mut c0 = 0.0f64;
    let all = env
        .piece_coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| (Location::Piece(i), c))
        .chain(env.atom_coeffs.iter().enumerate().map(|(j, c)| (Location::Atom(j), c)));
    for (location, c) in all {
        let size = c.size();
        if !size.is_finite() {
            return Err(EnvironmentError::DivergentMoment(format!(
                "coefficient size at {location} is not finite"
            )));
        }
        c0 = c0.max(size);
    }
    Ok(c0)
}

/// Integral of the jump kernel requested by [`kernel_moments`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentQuery {
    /// `∫_(lo,hi] z m(dz)`.
    FirstMoment { lo: f64, hi: f64 },
    /// `∫_(lo,hi] z² m(dz)`.
    SecondMoment { lo: f64, hi: f64 },
    /// `m((from, ∞))`.
    TailMass { from: f64 },
    /// `∫ (e^{-λz} - 1 + λz 1{z <= 1}) m(dz)`.
    K1 { lambda: f64 },
    /// `∫_(0,cutoff] (e^{-λz} - 1 + λz) m(dz)`.
    KTruncated { lambda: f64, cutoff: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moment {
    pub value: f64,
    pub error: f64,
}

impl MomentQuery {
    fn check(&self) -> Result<(), EnvironmentError> {
        let bad = match *self {
            MomentQuery::FirstMoment { lo, hi } | MomentQuery::SecondMoment { lo, hi } => {
                lo.is_nan() || hi.is_nan() || lo < 0.0 || lo > hi
            }
            MomentQuery::TailMass { from } => from.is_nan() || from < 0.0,
            MomentQuery::K1 { lambda } => !(lambda.is_finite() && lambda >= 0.0),
            MomentQuery::KTruncated { lambda, cutoff } => {
                !(lambda.is_finite() && lambda >= 0.0) || cutoff.is_nan() || cutoff < 0.0
            }
        };
        if bad {
            return Err(EnvironmentError::InvalidArgument(format!("invalid moment query {self:?}")));
        }
        Ok(())
    }

    /// Value from the closed-form kernel integrals.
    pub fn closed_form(&self, kernel: &JumpKernel) -> f64 {
        match *self {
            MomentQuery::FirstMoment { lo, hi } => kernel.moment(1.0, lo, hi),
            MomentQuery::SecondMoment { lo, hi } => kernel.moment(2.0, lo, hi),
            MomentQuery::TailMass { from } => kernel.tail_mass(from),
            MomentQuery::K1 { lambda } => kernel.k1_integral(lambda),
            MomentQuery::KTruncated { lambda, cutoff } => kernel.k_integral(lambda, 0.0, cutoff),
        }
    }
}

/// `K(λ, e^x) e^{-αx}` written so that it stays finite as `x -> -∞`.
fn small_jump_term(lambda: f64, x: f64, alpha: f64) -> f64 {
    exp_compensated_ratio(lambda * x.exp()) * lambda * lambda * ((2.0 - alpha) * x).exp()
}

fn quadrature_moment(p: &PowerLaw, query: MomentQuery, tol: f64) -> Result<Moment, EnvironmentError> {
    // Substituting z = e^x turns z^{-1-α} dz into z^{-α} dx; integrands are
    // written in x so that no overflow occurs far out on convergent ranges.
    let log_bound = |z: f64| {
        if z <= 0.0 {
            f64::NEG_INFINITY
        } else if z.is_infinite() {
            f64::INFINITY
        } else {
            z.ln()
        }
    };
    let scale = p.scale;
    let alpha = p.alpha;
    let run = |g: &dyn Fn(f64) -> f64, lo: f64, hi: f64| -> Result<Moment, EnvironmentError> {
        let lo = lo.max(p.zmin);
        let hi = hi.min(p.zmax);
        if hi <= lo {
            return Ok(Moment { value: 0.0, error: 0.0 });
        }
        let est = integrate(|x| scale * g(x), log_bound(lo), log_bound(hi), Tolerance::absolute(tol))?;
        Ok(Moment {
            value: est.value,
            error: est.error,
        })
    };
    match query {
        MomentQuery::FirstMoment { lo, hi } => run(&|x| ((1.0 - alpha) * x).exp(), lo, hi),
        MomentQuery::SecondMoment { lo, hi } => run(&|x| ((2.0 - alpha) * x).exp(), lo, hi),
        MomentQuery::TailMass { from } => run(&|x| (-alpha * x).exp(), from, f64::INFINITY),
        MomentQuery::K1 { lambda } => {
            let a = run(&|x| small_jump_term(lambda, x, alpha), 0.0, 1.0)?;
            let b = run(&|x| (-lambda * x.exp()).exp_m1() * (-alpha * x).exp(), 1.0, f64::INFINITY)?;
            Ok(Moment {
                value: a.value + b.value,
                error: a.error + b.error,
            })
        }
        MomentQuery::KTruncated { lambda, cutoff } => {
            run(&|x| small_jump_term(lambda, x, alpha), 0.0, cutoff)
        }
    }
}

/// Kernel integral at time `s`, with the default tolerance.
pub fn kernel_moments(env: &EnvironmentSpec, s: f64, query: MomentQuery) -> Result<Moment, EnvironmentError> {
    kernel_moments_with_tol(env, s, query, MOMENT_TOLERANCE)
}

/// Kernel integral at time `s`. Atomic kernels are summed exactly; power-law
/// kernels go through adaptive quadrature to absolute tolerance `tol`.
pub fn kernel_moments_with_tol(
    env: &EnvironmentSpec,
    s: f64,
    query: MomentQuery,
    tol: f64,
) -> Result<Moment, EnvironmentError> {
    query.check()?;
    let kernel = &env.coeffs_at(s).kernel;
    let closed = query.closed_form(kernel);
    if !closed.is_finite() {
        return Err(EnvironmentError::DivergentMoment(format!("{query:?} at time {s}")));
    }
    match kernel.density() {
        None => Ok(Moment {
            value: closed,
            error: 0.0,
        }),
        Some(p) => quadrature_moment(p, query, tol),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bottleneck() -> EnvironmentSpec {
        EnvironmentBuilder::new(1.0)
            .piece(0.0, 1.0, 1.0, Coefficients::new(0.0, 0.5, JumpKernel::zero()))
            .atom(0.5, 0.5, Coefficients::drift(1.0))
            .build()
            .unwrap()
    }

    #[test]
    fn c0_examples() {
        let feller = EnvironmentBuilder::new(1.0)
            .piece(0.0, 1.0, 1.0, Coefficients::new(0.0, 1.0, JumpKernel::zero()))
            .build()
            .unwrap();
        assert_eq!(compute_c0(&feller).unwrap(), 1.0);
        assert_eq!(compute_c0(&bottleneck()).unwrap(), 1.0);
        let heavy = EnvironmentBuilder::new(1.0)
            .piece(0.0, 1.0, 1.0, Coefficients::new(0.0, 0.0, JumpKernel::power_law(0.5, 1.0, 0.0, 1.0)))
            .build()
            .unwrap();
        // ∫_0^1 z² z^{-1.5} dz = 1/1.5
        assert!((compute_c0(&heavy).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn admissibility_violations_are_reported() {
        assert!(validate_admissible(&bottleneck()).is_admissible());
        let bad = EnvironmentBuilder::new(1.0)
            .piece(0.0, 1.0, 1.0, Coefficients::new(0.0, -0.1, JumpKernel::zero()))
            .atom(0.3, 1.0, Coefficients::new(1.5, 0.2, JumpKernel::zero()))
            .atom(0.6, 0.5, Coefficients::drift(2.0))
            .build()
            .unwrap();
        let report = validate_admissible(&bad);
        let conds: Vec<_> = report.violations.iter().map(|v| (v.condition, v.location)).collect();
        assert!(conds.contains(&(Condition::Diffusion, Location::Piece(0))));
        assert!(conds.contains(&(Condition::Diffusion, Location::Atom(0))));
        assert!(conds.contains(&(Condition::AtomDriftBound, Location::Atom(0))));
        assert!(conds.contains(&(Condition::AtomLargeJumps, Location::Atom(1))));
        assert!(!conds.contains(&(Condition::AtomDriftBound, Location::Atom(1))));
    }

    #[test]
    fn jump_reach_uses_eta() {
        let env = EnvironmentBuilder::new(1.0)
            .atom(0.5, 1.0, Coefficients::new(1.0, 0.0, JumpKernel::atomic(&[(3.0, 0.1)])))
            .build()
            .unwrap();
        assert!(validate_admissible(&env).is_admissible());
        assert_eq!(check_jump_reach(&env, 2.0).len(), 1);
        assert!(check_jump_reach(&env, 4.0).is_empty());
    }

    #[test]
    fn moments_by_quadrature_agree_with_closed_form() {
        let env = EnvironmentBuilder::new(1.0)
            .piece(0.0, 1.0, 1.0, Coefficients::new(0.0, 0.0, JumpKernel::power_law(1.2, 0.7, 0.0, 5.0)))
            .build()
            .unwrap();
        let kernel = &env.piece_coeffs()[0].kernel;
        for q in [
            MomentQuery::FirstMoment { lo: 0.1, hi: 2.0 },
            MomentQuery::SecondMoment { lo: 0.0, hi: 1.0 },
            MomentQuery::TailMass { from: 1.0 },
            MomentQuery::K1 { lambda: 1.5 },
            MomentQuery::KTruncated { lambda: 0.4, cutoff: 3.0 },
        ] {
            let m = kernel_moments(&env, 0.5, q).unwrap();
            let closed = q.closed_form(kernel);
            assert!((m.value - closed).abs() <= 1e-10_f64.max(m.error), "{q:?}: {} vs {closed}", m.value);
        }
        assert!(matches!(
            kernel_moments(&env, 0.5, MomentQuery::FirstMoment { lo: 0.0, hi: 1.0 }),
            Err(EnvironmentError::DivergentMoment(_))
        ));
        assert!(kernel_moments(&env, 0.5, MomentQuery::FirstMoment { lo: 2.0, hi: 1.0 }).is_err());
    }

    #[test]
    fn description_round_trips_through_toml() {
        let env = bottleneck();
        let text = toml::to_string(&env.describe()).unwrap();
        let back: EnvironmentDescription = toml::from_str(&text).unwrap();
        assert_eq!(back, env.describe());
    }
}
