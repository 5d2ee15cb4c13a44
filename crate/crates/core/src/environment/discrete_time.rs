//! Integer-valued time scales `γ_k(t) = ⌊β_k γ(t)⌋` with `β_k = 4 C0 (k + 1)`.

use serde::Serialize;

use super::{EnvironmentError, EnvironmentSpec, TimeScale};

/// `β γ(t)` within this distance of an integer (relative to `max(1, βγ)`) is
/// snapped to it before flooring.
pub const SNAP_TOLERANCE: f64 = 1e-12;

/// Role of one generation `n -> n + 1` of the discrete model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GenerationKind {
    /// Generation covering the open time interval `(left, right)`.
    Cell { left: f64, right: f64 },
    /// First generation inside the jump of `γ_k` at an atom.
    AtomStep { time: f64 },
    /// Remaining generations inside an atom jump.
    Identity { time: f64 },
}

/// A jump time of `γ_k` with the values around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscreteJump {
    pub time: f64,
    /// `γ_k(time-)`.
    pub before: usize,
    /// `Δγ_k(time)`.
    pub size: usize,
}

#[derive(Debug, Clone)]
pub struct DiscreteTimeScale {
    k: u64,
    c0: f64,
    beta: f64,
    timescale: TimeScale,
    /// `γ_k^{-1}(i)` for `i = 0..=N`.
    inverse: Vec<f64>,
    kinds: Vec<GenerationKind>,
}

pub(crate) fn snap_floor(x: f64) -> usize {
    let n = x.round();
    if (x - n).abs() <= SNAP_TOLERANCE * x.abs().max(1.0) {
        n.max(0.0) as usize
    } else {
        x.floor().max(0.0) as usize
    }
}

/// Discretizes the time scale of `env` at level `k` with constant `c0`.
pub fn discretize_time(env: &EnvironmentSpec, k: u64, c0: f64) -> Result<DiscreteTimeScale, EnvironmentError> {
    if k == 0 {
        return Err(EnvironmentError::InvalidArgument("level k must be at least 1".into()));
    }
    if !(c0.is_finite() && c0 >= 0.0) {
        return Err(EnvironmentError::InvalidArgument(format!(
            "C0 = {c0} must be finite and non-negative"
        )));
    }
    let timescale = env.timescale().clone();
    let beta = 4.0 * c0 * (k as f64 + 1.0);
    let generations = snap_floor(beta * timescale.total());
    if generations > 500_000_000 {
        return Err(EnvironmentError::InvalidArgument(format!(
            "{generations} generations exceed the supported size"
        )));
    }
    let mut ts = DiscreteTimeScale {
        k,
        c0,
        beta,
        timescale,
        inverse: Vec::with_capacity(generations + 1),
        kinds: Vec::with_capacity(generations),
    };
    ts.inverse.push(0.0);
    for i in 1..=generations {
        let y = i as f64 / beta;
        let mut s = ts.timescale.inverse(y).unwrap_or(ts.timescale.horizon());
        // Levels snapped down from just above an integer are reached slightly earlier.
        if ts.gamma_k(s) < i {
            s = ts.timescale.inverse(y * (1.0 + SNAP_TOLERANCE)).unwrap_or(ts.timescale.horizon());
        }
        ts.inverse.push(s);
    }
    let mut n = 0;
    while n < generations {
        let right = ts.inverse[n + 1];
        let after = ts.gamma_k(right).min(generations).max(n + 1);
        ts.kinds.push(GenerationKind::Cell {
            left: ts.inverse[n],
            right,
        });
        if after >= n + 2 {
            if ts.timescale.atom_at(right).is_none() {
                return Err(EnvironmentError::InvalidArgument(format!(
                    "discrete time scale jumps by {} at {right}, which is not an atom",
                    after - n
                )));
            }
            ts.kinds.push(GenerationKind::AtomStep { time: right });
            for _ in n + 2..after {
                ts.kinds.push(GenerationKind::Identity { time: right });
            }
        }
        n = after;
    }
    debug_assert_eq!(ts.kinds.len(), generations);
    Ok(ts)
}

impl DiscreteTimeScale {
    pub fn level(&self) -> u64 {
        self.k
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn timescale(&self) -> &TimeScale {
        &self.timescale
    }

    /// `N = γ_k(T)`.
    pub fn generations(&self) -> usize {
        self.kinds.len()
    }

    /// `γ_k(t)`.
    pub fn gamma_k(&self, t: f64) -> usize {
        snap_floor(self.beta * self.timescale.gamma(t))
    }

    /// `γ_k(t-)`, the number of levels reached strictly before `t`. This is
    /// not `⌊β γ(t-)⌋` when `β γ` reaches an integer only in the limit at `t`.
    pub fn gamma_k_left(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        self.inverse.partition_point(|&s| s < t) - 1
    }

    /// `γ_k^{-1}(i)` for `0 <= i <= N`.
    pub fn inverse(&self, i: usize) -> f64 {
        self.inverse[i]
    }

    pub fn kind(&self, n: usize) -> GenerationKind {
        self.kinds[n]
    }

    pub fn kinds(&self) -> &[GenerationKind] {
        &self.kinds
    }

    /// Jump times of `γ_k` in `(r, t]`.
    pub fn jumps(&self, r: f64, t: f64) -> Vec<DiscreteJump> {
        let mut out = Vec::new();
        let end = self.gamma_k(t).min(self.generations());
        let mut n = self.gamma_k(r);
        while n < end {
            let time = self.inverse[n + 1];
            let after = self.gamma_k(time).min(self.generations()).max(n + 1);
            out.push(DiscreteJump {
                time,
                before: n,
                size: after - n,
            });
            n = after;
        }
        out
    }
}
