//! Piecewise-linear time scales with atoms: `γ(t) = ∫_0^t ρ(s) ds + Σ_{s <= t} Δγ(s)`.

use serde::{Deserialize, Serialize};

use super::EnvironmentError;

/// Constant density `density` on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPiece {
    pub start: f64,
    pub end: f64,
    pub density: f64,
}

/// Point mass `mass` at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleAtom {
    pub time: f64,
    pub mass: f64,
}

/// Which part of the time scale a piece of mass comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Piece(usize),
    Atom(usize),
}

#[derive(Debug, Clone, Copy)]
enum Feature {
    Segment { start: f64, end: f64, density: f64 },
    Atom { time: f64, mass: f64 },
}

#[derive(Debug, Clone)]
pub struct TimeScale {
    horizon: f64,
    pieces: Vec<DensityPiece>,
    atoms: Vec<ScaleAtom>,
    /// Continuous mass of all pieces strictly before piece `i`.
    piece_prefix: Vec<f64>,
    /// Mass of atoms `0..i`.
    atom_prefix: Vec<f64>,
    features: Vec<Feature>,
    /// `γ` right after each feature.
    feature_after: Vec<f64>,
}

fn invalid(msg: impl Into<String>) -> EnvironmentError {
    EnvironmentError::InvalidTimeScale(msg.into())
}

impl TimeScale {
    pub fn new(horizon: f64, pieces: Vec<DensityPiece>, atoms: Vec<ScaleAtom>) -> Result<Self, EnvironmentError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon {horizon} must be finite and positive")));
        }
        let mut prev_end = 0.0;
        for (i, p) in pieces.iter().enumerate() {
            if !(p.start.is_finite() && p.end.is_finite() && p.start < p.end) {
                return Err(invalid(format!("piece {i} has an empty or non-finite interval")));
            }
            if p.start < prev_end || p.end > horizon {
                return Err(invalid(format!(
                    "piece {i} [{}, {}) overlaps a previous piece or leaves [0, {horizon}]",
                    p.start, p.end
                )));
            }
            if !(p.density.is_finite() && p.density >= 0.0) {
                return Err(invalid(format!("piece {i} density {} must be finite and non-negative", p.density)));
            }
            prev_end = p.end;
        }
        let mut prev_time = 0.0;
        for (j, a) in atoms.iter().enumerate() {
            if !(a.time > prev_time && a.time <= horizon) {
                return Err(invalid(format!(
                    "atom {j} at {} must lie in (0, {horizon}] after the previous atom",
                    a.time
                )));
            }
            if !(a.mass.is_finite() && a.mass > 0.0) {
                return Err(invalid(format!("atom {j} mass {} must be finite and positive", a.mass)));
            }
            prev_time = a.time;
        }

        let mut piece_prefix = Vec::with_capacity(pieces.len() + 1);
        piece_prefix.push(0.0);
        for p in &pieces {
            let last = *piece_prefix.last().unwrap();
            piece_prefix.push(last + p.density * (p.end - p.start));
        }
        let mut atom_prefix = Vec::with_capacity(atoms.len() + 1);
        atom_prefix.push(0.0);
        for a in &atoms {
            let last = *atom_prefix.last().unwrap();
            atom_prefix.push(last + a.mass);
        }

        let mut features = Vec::new();
        let mut ai = 0;
        for p in &pieces {
            while ai < atoms.len() && atoms[ai].time <= p.start {
                features.push(Feature::Atom {
                    time: atoms[ai].time,
                    mass: atoms[ai].mass,
                });
                ai += 1;
            }
            let mut cursor = p.start;
            while ai < atoms.len() && atoms[ai].time < p.end {
                if p.density > 0.0 {
                    features.push(Feature::Segment {
                        start: cursor,
                        end: atoms[ai].time,
                        density: p.density,
                    });
                }
                features.push(Feature::Atom {
                    time: atoms[ai].time,
                    mass: atoms[ai].mass,
                });
                cursor = atoms[ai].time;
                ai += 1;
            }
            if p.density > 0.0 {
                features.push(Feature::Segment {
                    start: cursor,
                    end: p.end,
                    density: p.density,
                });
            }
        }
        for a in &atoms[ai..] {
            features.push(Feature::Atom {
                time: a.time,
                mass: a.mass,
            });
        }
        let mut feature_after = Vec::with_capacity(features.len());
        let mut cum = 0.0;
        for f in &features {
            cum += match *f {
                Feature::Segment { start, end, density } => density * (end - start),
                Feature::Atom { mass, .. } => mass,
            };
            feature_after.push(cum);
        }

        Ok(Self {
            horizon,
            pieces,
            atoms,
            piece_prefix,
            atom_prefix,
            features,
            feature_after,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn pieces(&self) -> &[DensityPiece] {
        &self.pieces
    }

    pub fn atoms(&self) -> &[ScaleAtom] {
        &self.atoms
    }

    /// Continuous part `∫_0^t ρ`.
    pub fn continuous(&self, t: f64) -> f64 {
        let done = self.pieces.partition_point(|p| p.end <= t);
        let mut value = self.piece_prefix[done];
        if let Some(p) = self.pieces.get(done) {
            if p.start < t {
                value += p.density * (t - p.start);
            }
        }
        value
    }

    /// `γ(t)`, right-continuous.
    pub fn gamma(&self, t: f64) -> f64 {
        let n = self.atoms.partition_point(|a| a.time <= t);
        self.continuous(t) + self.atom_prefix[n]
    }

    /// `γ(t-)`.
    pub fn gamma_left(&self, t: f64) -> f64 {
        let n = self.atoms.partition_point(|a| a.time < t);
        self.continuous(t) + self.atom_prefix[n]
    }

    /// `γ(T)`.
    pub fn total(&self) -> f64 {
        self.feature_after.last().copied().unwrap_or(0.0)
    }

    /// Index of the atom located exactly at `t`.
    pub fn atom_at(&self, t: f64) -> Option<usize> {
        let i = self.atoms.partition_point(|a| a.time < t);
        (i < self.atoms.len() && self.atoms[i].time == t).then_some(i)
    }

    /// Index of the piece whose interval contains `t`; the horizon belongs to the
    /// last piece ending there.
    pub fn piece_at(&self, t: f64) -> Option<usize> {
        let i = self.pieces.partition_point(|p| p.end <= t);
        if i < self.pieces.len() && self.pieces[i].start <= t {
            return Some(i);
        }
        if t == self.horizon {
            if let Some(last) = self.pieces.last() {
                if last.end == t {
                    return Some(self.pieces.len() - 1);
                }
            }
        }
        None
    }

    /// `inf{ s >= 0 : γ(s) >= y }`, or `None` when `y > γ(T)`.
    pub fn inverse(&self, y: f64) -> Option<f64> {
        if y <= 0.0 {
            return Some(0.0);
        }
        let f = self.feature_after.partition_point(|&after| after < y);
        let feature = self.features.get(f)?;
        let before = if f == 0 { 0.0 } else { self.feature_after[f - 1] };
        Some(match *feature {
            Feature::Atom { time, .. } => time,
            Feature::Segment { start, end, density } => {
                if self.feature_after[f] == y {
                    end
                } else {
                    (start + (y - before) / density).min(end)
                }
            }
        })
    }

    /// Decomposition of `γ` restricted to the open interval `(a, b)`.
    pub fn open_parts(&self, a: f64, b: f64) -> Vec<(Part, f64)> {
        let mut parts = Vec::new();
        if b <= a {
            return parts;
        }
        let first = self.pieces.partition_point(|p| p.end <= a);
        for (i, p) in self.pieces.iter().enumerate().skip(first) {
            if p.start >= b {
                break;
            }
            let len = p.end.min(b) - p.start.max(a);
            if len > 0.0 && p.density > 0.0 {
                parts.push((Part::Piece(i), p.density * len));
            }
        }
        let first = self.atoms.partition_point(|x| x.time <= a);
        for (j, x) in self.atoms.iter().enumerate().skip(first) {
            if x.time >= b {
                break;
            }
            parts.push((Part::Atom(j), x.mass));
        }
        parts
    }

    /// Times at which the density or the atom structure changes, within `[0, T]`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = vec![0.0, self.horizon];
        for p in &self.pieces {
            pts.push(p.start);
            pts.push(p.end);
        }
        pts.extend(self.atoms.iter().map(|a| a.time));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}
