//! Jump measures on `(0, ∞)`: finitely many atoms or a truncated power law.
//!
//! All integrals are over half-open windows `(a, b]` intersected with the
//! support. Divergent integrals come back as `±∞`; callers that expose them
//! publicly turn that into an error.

use serde::{Deserialize, Serialize};

use statrs::function::gamma::ln_gamma;

use crate::special::{
    compensated_gamma, exp_compensated, gamma_window, poisson_pmf, power_integral, regularized_gamma_window,
};

/// Crossover in `λ·z` above which integrals are evaluated term by term.
const DIRECT_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelAtom {
    /// Jump size.
    pub z: f64,
    /// Mass of the atom.
    pub w: f64,
}

/// Density `scale · z^{-1-alpha}` on `(zmin, zmax)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub alpha: f64,
    pub scale: f64,
    #[serde(default)]
    pub zmin: f64,
    #[serde(default = "infinite")]
    pub zmax: f64,
}

fn infinite() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JumpKernel {
    Atomic {
        #[serde(default)]
        atoms: Vec<KernelAtom>,
    },
    #[serde(alias = "powerlaw")]
    PowerLaw(PowerLaw),
}

impl Default for JumpKernel {
    fn default() -> Self {
        JumpKernel::zero()
    }
}

/// `e^{-x} - 1 + x`.
pub fn kfun(x: f64) -> f64 {
    exp_compensated(x)
}

impl PowerLaw {
    fn window(&self, a: f64, b: f64) -> Option<(f64, f64)> {
        let lo = a.max(self.zmin);
        let hi = b.min(self.zmax);
        (hi > lo).then_some((lo, hi))
    }

    fn moment(&self, p: f64, a: f64, b: f64) -> f64 {
        match self.window(a, b) {
            Some((lo, hi)) => self.scale * power_integral(p - 1.0 - self.alpha, lo, hi),
            None => 0.0,
        }
    }

    fn exp_moment(&self, lambda: f64, p: f64, a: f64, b: f64) -> f64 {
        if lambda == 0.0 {
            return self.moment(p, a, b);
        }
        match self.window(a, b) {
            Some((lo, hi)) => {
                self.scale
                    * lambda.powf(self.alpha - p)
                    * gamma_window(p - self.alpha, lambda * lo, lambda * hi)
            }
            None => 0.0,
        }
    }

    fn k_integral(&self, lambda: f64, a: f64, b: f64) -> f64 {
        if lambda == 0.0 {
            return 0.0;
        }
        let Some((lo, hi)) = self.window(a, b) else {
            return 0.0;
        };
        if lambda * lo >= DIRECT_THRESHOLD {
            return self.exp_moment(lambda, 0.0, lo, hi) - self.moment(0.0, lo, hi)
                + lambda * self.moment(1.0, lo, hi);
        }
        let s = -self.alpha;
        self.scale
            * lambda.powf(self.alpha)
            * (compensated_gamma(s, 2, lambda * hi) - compensated_gamma(s, 2, lambda * lo))
    }

    fn expm1_integral(&self, lambda: f64, a: f64, b: f64) -> f64 {
        if lambda == 0.0 {
            return 0.0;
        }
        let Some((lo, hi)) = self.window(a, b) else {
            return 0.0;
        };
        if lambda * lo >= DIRECT_THRESHOLD {
            return self.exp_moment(lambda, 0.0, lo, hi) - self.moment(0.0, lo, hi);
        }
        if self.alpha >= 1.0 {
            if lo == 0.0 {
                return f64::NEG_INFINITY;
            }
            return self.k_integral(lambda, lo, hi) - lambda * self.moment(1.0, lo, hi);
        }
        let s = -self.alpha;
        self.scale
            * lambda.powf(self.alpha)
            * (compensated_gamma(s, 1, lambda * hi) - compensated_gamma(s, 1, lambda * lo))
    }

    fn poisson_mixture(&self, k: f64, n: u64, a: f64, b: f64) -> f64 {
        let Some((lo, hi)) = self.window(a, b) else {
            return 0.0;
        };
        let s = n as f64 - self.alpha;
        let nf = n as f64;
        if s > 0.0 {
            let log_front = self.alpha * k.ln() + ln_gamma(s) - ln_gamma(nf + 1.0);
            return self.scale * log_front.exp() * regularized_gamma_window(s, k * lo, k * hi);
        }
        self.scale * k.powf(self.alpha) * gamma_window(s, k * lo, k * hi) / (ln_gamma(nf + 1.0)).exp()
    }

    fn k_derivative_integral(&self, lambda: f64, a: f64, b: f64) -> f64 {
        if lambda == 0.0 {
            return 0.0;
        }
        let Some((lo, hi)) = self.window(a, b) else {
            return 0.0;
        };
        if lambda * lo >= DIRECT_THRESHOLD {
            return self.moment(1.0, lo, hi) - self.exp_moment(lambda, 1.0, lo, hi);
        }
        let s = 1.0 - self.alpha;
        -self.scale
            * lambda.powf(self.alpha - 1.0)
            * (compensated_gamma(s, 1, lambda * hi) - compensated_gamma(s, 1, lambda * lo))
    }
}

impl JumpKernel {
    pub fn zero() -> Self {
        JumpKernel::Atomic { atoms: Vec::new() }
    }

    pub fn atomic(atoms: &[(f64, f64)]) -> Self {
        JumpKernel::Atomic {
            atoms: atoms.iter().map(|&(z, w)| KernelAtom { z, w }).collect(),
        }
    }

    pub fn power_law(alpha: f64, scale: f64, zmin: f64, zmax: f64) -> Self {
        JumpKernel::PowerLaw(PowerLaw {
            alpha,
            scale,
            zmin,
            zmax,
        })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            JumpKernel::Atomic { atoms } => atoms.iter().all(|a| a.w == 0.0),
            JumpKernel::PowerLaw(p) => p.scale == 0.0,
        }
    }

    /// Checks parameter ranges; returns a description of the first problem.
    pub fn check(&self) -> Result<(), String> {
        match self {
            JumpKernel::Atomic { atoms } => {
                for a in atoms {
                    if !(a.z.is_finite() && a.z > 0.0) {
                        return Err(format!("jump size {} must be finite and positive", a.z));
                    }
                    if !(a.w.is_finite() && a.w >= 0.0) {
                        return Err(format!("atom mass {} must be finite and non-negative", a.w));
                    }
                }
                Ok(())
            }
            JumpKernel::PowerLaw(p) => {
                if !(p.alpha > 0.0 && p.alpha < 2.0) {
                    return Err(format!("power-law index {} must lie in (0, 2)", p.alpha));
                }
                if !(p.scale.is_finite() && p.scale >= 0.0) {
                    return Err(format!("power-law scale {} must be finite and non-negative", p.scale));
                }
                if !(p.zmin.is_finite() && p.zmin >= 0.0 && p.zmax > p.zmin) {
                    return Err(format!(
                        "power-law support ({}, {}) must satisfy 0 <= zmin < zmax",
                        p.zmin, p.zmax
                    ));
                }
                Ok(())
            }
        }
    }

    /// The measure multiplied by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            JumpKernel::Atomic { atoms } => JumpKernel::Atomic {
                atoms: atoms
                    .iter()
                    .map(|a| KernelAtom {
                        z: a.z,
                        w: a.w * factor,
                    })
                    .collect(),
            },
            JumpKernel::PowerLaw(p) => JumpKernel::PowerLaw(PowerLaw {
                scale: p.scale * factor,
                ..*p
            }),
        }
    }

    fn atoms_in(atoms: &[KernelAtom], a: f64, b: f64) -> impl Iterator<Item = &KernelAtom> {
        atoms.iter().filter(move |x| x.z > a && x.z <= b)
    }

    /// `m((a, b])`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        self.moment(0.0, a, b)
    }

    /// `m((a, ∞))`.
    pub fn tail_mass(&self, a: f64) -> f64 {
        self.mass(a, f64::INFINITY)
    }

    /// `∫_{(a,b]} z^p m(dz)`.
    pub fn moment(&self, p: f64, a: f64, b: f64) -> f64 {
        match self {
            JumpKernel::Atomic { atoms } => Self::atoms_in(atoms, a, b).map(|x| x.w * x.z.powf(p)).sum(),
            JumpKernel::PowerLaw(pl) => pl.moment(p, a, b),
        }
    }

    /// `∫ (1 ∧ z²) m(dz)`.
    pub fn integrable_mass(&self) -> f64 {
        self.moment(2.0, 0.0, 1.0) + self.tail_mass(1.0)
    }

    /// `∫_{(a,b]} e^{-λz} z^p m(dz)`.
    pub fn exp_moment(&self, lambda: f64, p: f64, a: f64, b: f64) -> f64 {
        match self {
            JumpKernel::Atomic { atoms } => Self::atoms_in(atoms, a, b)
                .map(|x| x.w * x.z.powf(p) * (-lambda * x.z).exp())
                .sum(),
            JumpKernel::PowerLaw(pl) => pl.exp_moment(lambda, p, a, b),
        }
    }

    /// `∫_{(a,b]} (e^{-λz} - 1 + λz) m(dz)`.
    pub fn k_integral(&self, lambda: f64, a: f64, b: f64) -> f64 {
        match self {
            JumpKernel::Atomic { atoms } => Self::atoms_in(atoms, a, b).map(|x| x.w * kfun(lambda * x.z)).sum(),
            JumpKernel::PowerLaw(pl) => pl.k_integral(lambda, a, b),
        }
    }

    /// `∫_{(a,b]} (e^{-λz} - 1) m(dz)`.
    pub fn expm1_integral(&self, lambda: f64, a: f64, b: f64) -> f64 {
        match self {
            JumpKernel::Atomic { atoms } => Self::atoms_in(atoms, a, b)
                .map(|x| x.w * (-lambda * x.z).exp_m1())
                .sum(),
            JumpKernel::PowerLaw(pl) => pl.expm1_integral(lambda, a, b),
        }
    }

    /// `∫_{(a,b]} z (1 - e^{-λz}) m(dz)`, the λ-derivative of [`Self::k_integral`].
    pub fn k_derivative_integral(&self, lambda: f64, a: f64, b: f64) -> f64 {
        match self {
            JumpKernel::Atomic { atoms } => Self::atoms_in(atoms, a, b)
                .map(|x| -x.w * x.z * (-lambda * x.z).exp_m1())
                .sum(),
            JumpKernel::PowerLaw(pl) => pl.k_derivative_integral(lambda, a, b),
        }
    }

    /// `∫ (e^{-λz} - 1 + λz 1{z <= 1}) m(dz)`.
    pub fn k1_integral(&self, lambda: f64) -> f64 {
        self.k_integral(lambda, 0.0, 1.0) + self.expm1_integral(lambda, 1.0, f64::INFINITY)
    }

    /// λ-derivative of [`Self::k1_integral`].
    pub fn k1_derivative(&self, lambda: f64) -> f64 {
        self.k_derivative_integral(lambda, 0.0, 1.0) - self.exp_moment(lambda, 1.0, 1.0, f64::INFINITY)
    }

    /// Upper end of the support (`0` for the zero measure).
    pub fn support_max(&self) -> f64 {
        match self {
            JumpKernel::Atomic { atoms } => atoms
                .iter()
                .filter(|a| a.w > 0.0)
                .map(|a| a.z)
                .fold(0.0, f64::max),
            JumpKernel::PowerLaw(p) => {
                if p.scale > 0.0 {
                    p.zmax
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫_{(a,b]} e^{-kz} (kz)^n / n! m(dz)`: weight of `n` in the Poisson mixture with rates `kz`.
    pub fn poisson_mixture(&self, k: f64, n: u64, a: f64, b: f64) -> f64 {
        match self {
            JumpKernel::Atomic { atoms } => Self::atoms_in(atoms, a, b).map(|x| x.w * poisson_pmf(n, k * x.z)).sum(),
            JumpKernel::PowerLaw(pl) => pl.poisson_mixture(k, n, a, b),
        }
    }

    /// The power-law parameters, if the measure has a density.
    pub(crate) fn density(&self) -> Option<&PowerLaw> {
        match self {
            JumpKernel::PowerLaw(p) => Some(p),
            JumpKernel::Atomic { .. } => None,
        }
    }
}
