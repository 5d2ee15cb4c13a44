//! Branching mechanisms `φ(s, λ)` and their truncated parts.

use thiserror::Error;

use crate::environment::{Coefficients, EnvironmentSpec};
use crate::special::exp_compensated;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("jump cutoff {cutoff} < 1 at level k = {k} with C0 = {c0}")]
    CutoffTooSmall { k: u64, c0: f64, cutoff: f64 },
    #[error("mechanism integral diverges at time {time}")]
    Divergent { time: f64 },
}

/// `e^{-λz} - 1 + λz 1{z <= 1}`.
pub fn k1(lambda: f64, z: f64) -> f64 {
    if z <= 1.0 {
        exp_compensated(lambda * z)
    } else {
        (-lambda * z).exp_m1()
    }
}

/// Mechanism of a single coefficient set: `b1 λ + c λ² + ∫ K1(λ, z) m(dz)`.
pub fn phi_of(coeffs: &Coefficients, lambda: f64) -> f64 {
    coeffs.b1 * lambda + coeffs.c * lambda * lambda + coeffs.kernel.k1_integral(lambda)
}

/// `∂φ/∂λ` of a single coefficient set.
pub fn phi_derivative_of(coeffs: &Coefficients, lambda: f64) -> f64 {
    coeffs.b1 + 2.0 * coeffs.c * lambda + coeffs.kernel.k1_derivative(lambda)
}

fn check_lambda(lambda: f64) -> Result<(), MechanismError> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(MechanismError::InvalidArgument(format!("λ = {lambda} must be finite and non-negative")))
    }
}

/// `φ(s, λ)`; atom times use the atom coefficients.
pub fn phi(env: &EnvironmentSpec, s: f64, lambda: f64) -> Result<f64, MechanismError> {
    check_lambda(lambda)?;
    let v = phi_of(env.coeffs_at(s), lambda);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MechanismError::Divergent { time: s })
    }
}

/// Jump cutoff `c_k = k^{1/3} / C0 - 1` (infinite when `C0 = 0`).
pub fn jump_cutoff(k: u64, c0: f64) -> f64 {
    (k as f64).cbrt() / c0 - 1.0
}

fn checked_cutoff(k: u64, c0: f64) -> Result<f64, MechanismError> {
    if k == 0 || !(c0.is_finite() && c0 >= 0.0) {
        return Err(MechanismError::InvalidArgument(format!("need k >= 1 and C0 >= 0, got k = {k}, C0 = {c0}")));
    }
    let cutoff = jump_cutoff(k, c0);
    if cutoff < 1.0 {
        return Err(MechanismError::CutoffTooSmall { k, c0, cutoff });
    }
    Ok(cutoff)
}

/// `c λ² + ∫_(0, cutoff] K(λ, z) m(dz)` for one coefficient set.
pub fn phi0_of(coeffs: &Coefficients, lambda: f64, cutoff: f64) -> f64 {
    coeffs.c * lambda * lambda + coeffs.kernel.k_integral(lambda, 0.0, cutoff.max(0.0))
}

/// Drift after moving jumps in `(1, cutoff]` into the compensated part.
/// For `cutoff < 1` the jumps in `(cutoff, 1]` are moved out instead.
pub fn drift_of(coeffs: &Coefficients, cutoff: f64) -> f64 {
    if cutoff >= 1.0 {
        coeffs.b1 - coeffs.kernel.moment(1.0, 1.0, cutoff)
    } else {
        coeffs.b1 + coeffs.kernel.moment(1.0, cutoff.max(0.0), 1.0)
    }
}

/// `φ_{0,k}(s, λ) = c λ² + ∫_(0, c_k] K(λ, z) m(s, dz)`; needs `c_k >= 1`.
pub fn phi0k(env: &EnvironmentSpec, s: f64, lambda: f64, k: u64, c0: f64) -> Result<f64, MechanismError> {
    check_lambda(lambda)?;
    let cutoff = checked_cutoff(k, c0)?;
    let v = phi0_of(env.coeffs_at(s), lambda, cutoff);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MechanismError::Divergent { time: s })
    }
}

/// `b_k(s) = b1(s) - ∫_(1, c_k] z m(s, dz)`; needs `c_k >= 1`.
pub fn bk(env: &EnvironmentSpec, s: f64, k: u64, c0: f64) -> Result<f64, MechanismError> {
    let cutoff = checked_cutoff(k, c0)?;
    let v = drift_of(env.coeffs_at(s), cutoff);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MechanismError::Divergent { time: s })
    }
}

/// Growth bound `(1 + λ)² C0` of the mechanism.
pub fn m_phi(lambda: f64, c0: f64) -> f64 {
    (1.0 + lambda) * (1.0 + lambda) * c0
}

/// Bound `M_φ(λ2 + e^{-1}/λ1)` used for Lipschitz estimates on `[λ1, λ2]`.
pub fn m_phi_prime(lambda1: f64, lambda2: f64, c0: f64) -> Result<f64, MechanismError> {
    if !(lambda1 > 0.0 && lambda2.is_finite()) {
        return Err(MechanismError::InvalidArgument(format!(
            "need λ1 > 0 and finite λ2, got {lambda1}, {lambda2}"
        )));
    }
    Ok(m_phi(lambda2 + (-1.0f64).exp() / lambda1, c0))
}
