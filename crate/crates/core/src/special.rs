//! Incomplete-gamma style integrals with subtracted Taylor terms.
//!
//! These back the closed-form power-law kernel integrals. `compensated_gamma`
//! allows negative shape parameters as long as enough Taylor terms of `e^{-t}`
//! are removed to make the integrand integrable at the origin.

use statrs::function::gamma::{gamma, gamma_lr, gamma_ur, ln_gamma};

use crate::quadrature::{integrate, Tolerance};

/// Split point between the power series and the direct quadrature of the tail.
const SERIES_LIMIT: f64 = 3.0;
/// Beyond `x + TAIL_CUTOFF` the factor `e^{-t}` is below 1e-30 relative to `x`.
const TAIL_CUTOFF: f64 = 70.0;

/// `(e^{-x} - 1 + x)` without cancellation for small `x`.
pub fn exp_compensated(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let mut term = x * x / 2.0;
        let mut sum = term;
        for j in 3..14 {
            term *= -x / j as f64;
            sum += term;
        }
        sum
    } else {
        (-x).exp_m1() + x
    }
}

/// `(e^{-x} - 1 + x) / x²`, bounded for all `x >= 0`.
pub fn exp_compensated_ratio(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let mut term = 0.5;
        let mut sum = term;
        for j in 3..14 {
            term *= -x / j as f64;
            sum += term;
        }
        sum
    } else {
        exp_compensated(x) / (x * x)
    }
}

/// `∫_a^b t^q dt` for `0 <= a <= b <= ∞`; returns `+∞` when divergent.
pub fn power_integral(q: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let p = q + 1.0;
    if a == 0.0 && p <= 0.0 {
        return f64::INFINITY;
    }
    if b.is_infinite() {
        if p >= 0.0 {
            return f64::INFINITY;
        }
        return -a.powf(p) / p;
    }
    if a == 0.0 {
        return b.powf(p) / p;
    }
    let log_ratio = (b / a).ln();
    if p == 0.0 {
        return log_ratio;
    }
    a.powf(p) * (p * log_ratio).exp_m1() / p
}

fn factorial(j: u32) -> f64 {
    (1..=j).fold(1.0, |acc, i| acc * i as f64)
}

/// Series for `∫_0^x (e^{-t} - Σ_{j<m} (-t)^j/j!) t^{s-1} dt`, `x <= SERIES_LIMIT`.
fn compensated_series(s: f64, m: u32, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let xs = x.powf(s);
    // (-x)^m / m!
    let mut term = (-x).powi(m as i32) / factorial(m);
    let mut sum = 0.0;
    let mut j = m;
    loop {
        let contrib = term / (j as f64 + s);
        sum += contrib;
        if j > m + 4 && contrib.abs() <= 1e-18 * sum.abs() {
            break;
        }
        if j > 200 {
            break;
        }
        j += 1;
        term *= -x / j as f64;
    }
    sum * xs
}

/// `∫_a^b e^{-t} t^{s-1} dt` by direct quadrature with `a > 0`.
fn gamma_window_direct(s: f64, a: f64, b: f64) -> f64 {
    let hi = b.min(a + TAIL_CUTOFF);
    if hi <= a {
        return 0.0;
    }
    let f = |t: f64| (-t).exp() * t.powf(s - 1.0);
    let scale = (-a).exp() * a.powf(s - 1.0).max(hi.powf(s - 1.0));
    let tol = Tolerance::new(1e-17 * scale.max(f64::MIN_POSITIVE), 1e-14);
    match integrate(f, a, hi, tol) {
        Ok(e) => e.value,
        Err(crate::quadrature::QuadratureError::NonConvergence { value, .. }) => value,
        Err(_) => f64::NAN,
    }
}

/// `G_m(s, x) = ∫_0^x (e^{-t} - Σ_{j<m} (-t)^j/j!) t^{s-1} dt` for `s + m > 0`,
/// `0 <= x <= ∞`. Divergent limits at infinity return signed infinities.
pub fn compensated_gamma(s: f64, m: u32, x: f64) -> f64 {
    debug_assert!(s + m as f64 > 0.0, "compensated_gamma needs s + m > 0");
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        if s < 1.0 - m as f64 || m == 0 {
            return gamma(s);
        }
        return if m.is_multiple_of(2) {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
    }
    if x <= SERIES_LIMIT {
        return compensated_series(s, m, x);
    }
    let mut value = compensated_series(s, m, SERIES_LIMIT) + gamma_window_direct(s, SERIES_LIMIT, x);
    for j in 0..m {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        value -= sign / factorial(j) * power_integral(j as f64 + s - 1.0, SERIES_LIMIT, x);
    }
    value
}

/// Smallest number of Taylor terms making `t^{s-1}` times the remainder integrable at 0.
fn terms_needed(s: f64) -> u32 {
    if s > 0.0 {
        0
    } else {
        (-s).floor() as u32 + 1
    }
}

/// `∫_a^b e^{-t} t^{s-1} dt` for `0 <= a <= b <= ∞` and any real `s`;
/// `+∞` when the integral diverges at the origin.
pub fn gamma_window(s: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if a >= SERIES_LIMIT {
        return gamma_window_direct(s, a, b);
    }
    if b > SERIES_LIMIT {
        return gamma_window(s, a, SERIES_LIMIT) + gamma_window_direct(s, SERIES_LIMIT, b);
    }
    let m = terms_needed(s);
    if a == 0.0 && m > 0 {
        return f64::INFINITY;
    }
    let mut value = compensated_series(s, m, b) - compensated_series(s, m, a);
    for j in 0..m {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        value += sign / factorial(j) * power_integral(j as f64 + s - 1.0, a, b);
    }
    value
}

/// Poisson probability `e^{-rate} rate^n / n!`.
pub fn poisson_pmf(n: u64, rate: f64) -> f64 {
    if rate == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let n = n as f64;
    (n * rate.ln() - rate - ln_gamma(n + 1.0)).exp()
}

fn lower_regularized(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        gamma_lr(a, x)
    }
}

fn upper_regularized(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma_ur(a, x)
    }
}

/// `(1/Γ(a)) ∫_lo^hi e^{-t} t^{a-1} dt` for `a > 0`, `0 <= lo <= hi <= ∞`.
pub fn regularized_gamma_window(a: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if lo > a {
        (upper_regularized(a, lo) - upper_regularized(a, hi)).max(0.0)
    } else {
        (lower_regularized(a, hi) - lower_regularized(a, lo)).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        integrate(f, a, b, Tolerance::new(1e-15, 1e-13)).unwrap().value
    }

    #[test]
    fn exp_compensated_matches_direct_for_moderate_x() {
        for &x in &[0.05f64, 0.099, 0.1, 0.5, 2.0, 30.0] {
            let direct = (-x).exp() - 1.0 + x;
            assert!((exp_compensated(x) - direct).abs() <= 1e-12 * direct.abs());
        }
        assert!((exp_compensated(1e-8) - 5e-17).abs() < 1e-24);
    }

    #[test]
    fn power_integral_cases() {
        assert!((power_integral(-1.0, 1.0, std::f64::consts::E) - 1.0).abs() < 1e-15);
        assert!((power_integral(2.0, 0.0, 3.0) - 9.0).abs() < 1e-13);
        assert!((power_integral(-2.0, 1.0, f64::INFINITY) - 1.0).abs() < 1e-15);
        assert!(power_integral(-1.0, 0.0, 1.0).is_infinite());
        assert!(power_integral(-0.5, 1.0, f64::INFINITY).is_infinite());
    }

    #[test]
    fn compensated_gamma_matches_quadrature() {
        for &(s, m) in &[(-0.5, 2u32), (-1.5, 2), (0.5, 1), (-0.3, 1), (1.7, 0), (0.0, 1), (-1.0, 2)] {
            for &x in &[0.3, 1.0, 2.9, 3.0, 5.0, 12.0] {
                let f = |t: f64| {
                    let mut poly = 0.0;
                    let mut term = 1.0;
                    for j in 0..m {
                        if j > 0 {
                            term *= -t / j as f64;
                        }
                        poly += term;
                    }
                    // subtract in compensated form to avoid cancellation near 0
                    let rem = if m == 2 {
                        exp_compensated(t)
                    } else if m == 1 {
                        (-t).exp_m1()
                    } else {
                        (-t).exp() - poly
                    };
                    rem * t.powf(s - 1.0)
                };
                let expect = quad(f, 0.0, x);
                let got = compensated_gamma(s, m, x);
                assert!(
                    (got - expect).abs() <= 1e-11 * expect.abs().max(1.0),
                    "s={s} m={m} x={x}: {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn compensated_gamma_at_infinity_is_gamma() {
        // ∫_0^∞ (e^{-t} - 1 + t) t^{-2.5} dt = Γ(-1.5)
        let g = compensated_gamma(-1.5, 2, f64::INFINITY);
        assert!((g - 4.0 * std::f64::consts::PI.sqrt() / 3.0).abs() < 1e-12);
        let g = compensated_gamma(-0.5, 1, f64::INFINITY);
        assert!((g + 2.0 * std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!(compensated_gamma(-0.5, 2, f64::INFINITY).is_infinite());
    }

    #[test]
    fn gamma_window_matches_quadrature() {
        for &s in &[-1.5, -0.5, 0.5, 1.0, 2.5] {
            for &(a, b) in &[(0.2, 0.9), (0.5, 3.0), (1.0, 8.0), (4.0, 9.0), (2.0, f64::INFINITY)] {
                let expect = quad(|t| (-t).exp() * t.powf(s - 1.0), a, b);
                let got = gamma_window(s, a, b);
                assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1e-3), "s={s} [{a},{b}]");
            }
        }
        assert!((gamma_window(1.0, 0.0, f64::INFINITY) - 1.0).abs() < 1e-14);
        assert!(gamma_window(-0.5, 0.0, 1.0).is_infinite());
    }
}
