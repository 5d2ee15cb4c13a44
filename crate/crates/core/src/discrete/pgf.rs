//! Structural probability generating functions.

use serde::Serialize;

use crate::environment::{JumpKernel, PowerLaw};
use crate::special::poisson_pmf;

/// A non-polynomial part of a pgf.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Component {
    /// `weight · e^{rate (u - 1)}`.
    Poisson { weight: f64, rate: f64 },
    /// `(weight / level) ∫_(lo,hi] (e^{-level z (1-u)} - 1 [+ level z (1-u)]) m(dz)`
    /// for a power-law `m`; the bracketed term is present when `compensated`.
    JumpFamily {
        weight: f64,
        level: f64,
        law: PowerLaw,
        lo: f64,
        hi: f64,
        compensated: bool,
    },
}

impl Component {
    fn kernel(law: &PowerLaw) -> JumpKernel {
        JumpKernel::PowerLaw(*law)
    }

    /// Value at `u = 1 - y`, shifted so that the value at `u = 1` is zero.
    fn drop_at(&self, y: f64) -> f64 {
        match *self {
            Component::Poisson { weight, rate } => weight * (-rate * y).exp_m1(),
            Component::JumpFamily {
                weight,
                level,
                ref law,
                lo,
                hi,
                compensated,
            } => {
                let m = Self::kernel(law);
                let lambda = level * y;
                let integral = if compensated {
                    m.k_integral(lambda, lo, hi)
                } else {
                    m.expm1_integral(lambda, lo, hi)
                };
                weight / level * integral
            }
        }
    }

    fn value_at_one(&self) -> f64 {
        match *self {
            Component::Poisson { weight, .. } => weight,
            Component::JumpFamily { .. } => 0.0,
        }
    }

    /// Coefficient of `u^n`.
    fn coefficient(&self, n: u64) -> f64 {
        match *self {
            Component::Poisson { weight, rate } => weight * poisson_pmf(n, rate),
            Component::JumpFamily {
                weight,
                level,
                ref law,
                lo,
                hi,
                compensated,
            } => {
                let m = Self::kernel(law);
                let scale = weight / level;
                match (n, compensated) {
                    (0, true) => scale * m.k_integral(level, lo, hi),
                    (1, true) => -weight * m.k_derivative_integral(level, lo, hi),
                    (0, false) => scale * m.expm1_integral(level, lo, hi),
                    _ => scale * m.poisson_mixture(level, n, lo, hi),
                }
            }
        }
    }

    fn mean(&self) -> f64 {
        match *self {
            Component::Poisson { weight, rate } => weight * rate,
            Component::JumpFamily {
                weight,
                ref law,
                lo,
                hi,
                compensated,
                ..
            } => {
                if compensated {
                    0.0
                } else {
                    weight * Self::kernel(law).moment(1.0, lo, hi)
                }
            }
        }
    }

    /// Index from which all coefficients are nonnegative by construction.
    fn nonnegative_from(&self) -> u64 {
        match *self {
            Component::Poisson { weight, rate } => {
                if weight >= 0.0 && rate >= 0.0 {
                    0
                } else {
                    u64::MAX
                }
            }
            Component::JumpFamily { compensated, .. } => {
                if compensated {
                    2
                } else {
                    1
                }
            }
        }
    }
}

/// `g(u) = constant + linear·u + quadratic·u² + Σ components(u)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pgf {
    pub constant: f64,
    pub linear: f64,
    pub quadratic: f64,
    pub components: Vec<Component>,
}

impl Pgf {
    pub fn identity() -> Self {
        Self::quadratic(0.0, 1.0, 0.0)
    }

    /// `a0 + a1 u + a2 u²`.
    pub fn quadratic(a0: f64, a1: f64, a2: f64) -> Self {
        Self {
            constant: a0,
            linear: a1,
            quadratic: a2,
            components: Vec::new(),
        }
    }

    /// `e^{rate (u - 1)}`, the Poisson law.
    pub fn poisson(rate: f64) -> Self {
        Self {
            constant: 0.0,
            linear: 0.0,
            quadratic: 0.0,
            components: vec![Component::Poisson { weight: 1.0, rate }],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.constant == 0.0 && self.linear == 1.0 && self.quadratic == 0.0 && self.components.is_empty()
    }

    /// `g(u)` summed term by term.
    pub fn eval(&self, u: f64) -> f64 {
        let y = 1.0 - u;
        let mut value = self.constant + self.linear * u + self.quadratic * u * u;
        for c in &self.components {
            value += c.value_at_one() + c.drop_at(y);
        }
        value
    }

    /// `1 - g(1 - y)`, accurate for small `y`. Uses `g(1) = 1`.
    pub fn deficit(&self, y: f64) -> f64 {
        let mut value = self.linear * y + self.quadratic * y * (2.0 - y);
        for c in &self.components {
            value -= c.drop_at(y);
        }
        value
    }

    /// `k [g(1 - λ/k) - (1 - λ/k)]`.
    pub fn excess(&self, lambda: f64, k: f64) -> f64 {
        if self.is_identity() {
            return 0.0;
        }
        lambda - k * self.deficit(lambda / k)
    }

    /// Coefficient of `u^n`.
    pub fn coefficient(&self, n: u64) -> f64 {
        let poly = match n {
            0 => self.constant,
            1 => self.linear,
            2 => self.quadratic,
            _ => 0.0,
        };
        poly + self.components.iter().map(|c| c.coefficient(n)).sum::<f64>()
    }

    /// Smallest coefficient. Coefficients past the polynomial part of every
    /// component are nonnegative by construction, so only a few are examined.
    pub fn min_coefficient(&self) -> f64 {
        let last = self
            .components
            .iter()
            .map(|c| c.nonnegative_from())
            .max()
            .unwrap_or(0)
            .max(3);
        if last == u64::MAX {
            return f64::NEG_INFINITY;
        }
        (0..last).map(|n| self.coefficient(n)).fold(f64::INFINITY, f64::min)
    }

    /// `g'(1)`.
    pub fn mean(&self) -> f64 {
        self.linear + 2.0 * self.quadratic + self.components.iter().map(Component::mean).sum::<f64>()
    }

    /// `g(1)`; equal to 1 for a proper pgf.
    pub fn total(&self) -> f64 {
        self.eval(1.0)
    }
}
