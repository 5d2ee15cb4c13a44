//! Conversion between raw characteristic triplets and the canonical
//! time-scale representation.
//!
//! A raw triplet gives the drift, diffusion and jump measures directly as
//! measures in time. The canonical form divides them by the dominating scale
//! `γ = |b̃1| + c̃ + ∫(1 ∧ z²) m̃`, which makes the coefficients bounded by 1.

use serde::{Deserialize, Serialize};

use super::{
    Coefficients, DensityPiece, EnvironmentError, EnvironmentSpec, JumpKernel, KernelAtom, ScaleAtom, TimeScale,
};

/// Raw measures with constant density on `[start, end)`; the jump measure is
/// `jump_intensity · kernel`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPiece {
    pub start: f64,
    pub end: f64,
    pub drift: f64,
    pub diffusion: f64,
    pub jump_intensity: f64,
    pub kernel: JumpKernel,
}

/// Raw point masses at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAtom {
    pub time: f64,
    pub drift: f64,
    pub jumps: JumpKernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTriplet {
    pub horizon: f64,
    pub pieces: Vec<RawPiece>,
    pub atoms: Vec<RawAtom>,
}

fn inconsistent(msg: String) -> EnvironmentError {
    EnvironmentError::InconsistentTriplet(msg)
}

/// Builds the canonical environment whose characteristics reproduce `raw`.
pub fn canonicalize(raw: &RawTriplet) -> Result<EnvironmentSpec, EnvironmentError> {
    let mut pieces = Vec::with_capacity(raw.pieces.len());
    let mut piece_coeffs = Vec::with_capacity(raw.pieces.len());
    for (i, p) in raw.pieces.iter().enumerate() {
        p.kernel
            .check()
            .map_err(|e| inconsistent(format!("piece {i}: {e}")))?;
        if !(p.drift.is_finite() && p.diffusion.is_finite() && p.jump_intensity.is_finite()) {
            return Err(inconsistent(format!("piece {i} has non-finite densities")));
        }
        if p.diffusion < 0.0 || p.jump_intensity < 0.0 {
            return Err(inconsistent(format!(
                "piece {i}: diffusion and jump measures must be non-negative"
            )));
        }
        let jump_size = p.jump_intensity * p.kernel.integrable_mass();
        if !jump_size.is_finite() {
            return Err(inconsistent(format!("piece {i}: jump measure is not a Lévy measure")));
        }
        let density = p.drift.abs() + p.diffusion + jump_size;
        let coeffs = if density > 0.0 {
            Coefficients {
                b1: p.drift / density,
                c: p.diffusion / density,
                kernel: p.kernel.scaled(p.jump_intensity / density),
            }
        } else {
            Coefficients::default()
        };
        pieces.push(DensityPiece {
            start: p.start,
            end: p.end,
            density,
        });
        piece_coeffs.push(coeffs);
    }

    let mut atoms = Vec::new();
    let mut atom_coeffs = Vec::new();
    for (j, a) in raw.atoms.iter().enumerate() {
        a.jumps
            .check()
            .map_err(|e| inconsistent(format!("atom {j}: {e}")))?;
        if !a.drift.is_finite() {
            return Err(inconsistent(format!("atom {j} has a non-finite drift")));
        }
        let mass = a.drift.abs() + a.jumps.integrable_mass();
        if !mass.is_finite() {
            return Err(inconsistent(format!("atom {j}: jump measure is not a Lévy measure")));
        }
        if mass == 0.0 {
            // An atom without drift or jumps leaves no trace on the process.
            continue;
        }
        atoms.push(ScaleAtom { time: a.time, mass });
        atom_coeffs.push(Coefficients {
            b1: a.drift / mass,
            c: 0.0,
            kernel: a.jumps.scaled(1.0 / mass),
        });
    }

    let timescale = TimeScale::new(raw.horizon, pieces, atoms)?;
    EnvironmentSpec::new(timescale, piece_coeffs, atom_coeffs)
}

impl EnvironmentSpec {
    /// The raw triplet described by this environment.
    pub fn to_raw(&self) -> RawTriplet {
        RawTriplet {
            horizon: self.horizon(),
            pieces: self
                .timescale()
                .pieces()
                .iter()
                .zip(self.piece_coeffs())
                .map(|(p, c)| RawPiece {
                    start: p.start,
                    end: p.end,
                    drift: c.b1 * p.density,
                    diffusion: c.c * p.density,
                    jump_intensity: p.density,
                    kernel: c.kernel.clone(),
                })
                .collect(),
            atoms: self
                .timescale()
                .atoms()
                .iter()
                .zip(self.atom_coeffs())
                .map(|(a, c)| RawAtom {
                    time: a.time,
                    drift: c.b1 * a.mass,
                    jumps: c.kernel.scaled(a.mass),
                })
                .collect(),
        }
    }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}

fn same_measure(a: &JumpKernel, b: &JumpKernel, rel: f64) -> bool {
    match (a, b) {
        (JumpKernel::Atomic { atoms: x }, JumpKernel::Atomic { atoms: y }) => {
            let keep = |v: &Vec<KernelAtom>| v.iter().filter(|k| k.w > 0.0).copied().collect::<Vec<_>>();
            let (x, y) = (keep(x), keep(y));
            x.len() == y.len() && x.iter().zip(&y).all(|(p, q)| p.z == q.z && close(p.w, q.w, rel))
        }
        (JumpKernel::PowerLaw(p), JumpKernel::PowerLaw(q)) => {
            p.alpha == q.alpha && p.zmin == q.zmin && p.zmax == q.zmax && close(p.scale, q.scale, rel)
        }
        _ => a.is_zero() && b.is_zero(),
    }
}

impl RawTriplet {
    /// Whether both triplets describe the same measures, up to a relative
    /// tolerance on every mass (the jump factorisation may differ).
    pub fn same_measures(&self, other: &RawTriplet, rel: f64) -> bool {
        if self.horizon != other.horizon || self.pieces.len() != other.pieces.len() {
            return false;
        }
        let pieces_match = self.pieces.iter().zip(&other.pieces).all(|(p, q)| {
            p.start == q.start
                && p.end == q.end
                && close(p.drift, q.drift, rel)
                && close(p.diffusion, q.diffusion, rel)
                && same_measure(&p.kernel.scaled(p.jump_intensity), &q.kernel.scaled(q.jump_intensity), rel)
        });
        let live = |atoms: &[RawAtom]| {
            atoms
                .iter()
                .filter(|a| a.drift != 0.0 || !a.jumps.is_zero())
                .cloned()
                .collect::<Vec<_>>()
        };
        let (x, y) = (live(&self.atoms), live(&other.atoms));
        pieces_match
            && x.len() == y.len()
            && x.iter().zip(&y).all(|(a, b)| {
                a.time == b.time && close(a.drift, b.drift, rel) && same_measure(&a.jumps, &b.jumps, rel)
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atom_with_drift_and_large_jump() {
        let raw = RawTriplet {
            horizon: 2.0,
            pieces: vec![],
            atoms: vec![RawAtom {
                time: 1.0,
                drift: -0.5,
                jumps: JumpKernel::atomic(&[(3.0, 1.0)]),
            }],
        };
        let env = canonicalize(&raw).unwrap();
        let atom = env.timescale().atoms()[0];
        assert_eq!(atom.mass, 1.5);
        let c = &env.atom_coeffs()[0];
        assert!((c.b1 + 1.0 / 3.0).abs() < 1e-15);
        match &c.kernel {
            JumpKernel::Atomic { atoms } => {
                assert_eq!(atoms[0].z, 3.0);
                assert!((atoms[0].w - 2.0 / 3.0).abs() < 1e-15);
            }
            _ => panic!("kernel type changed"),
        }
        assert!(env.to_raw().same_measures(&raw, 4.0 * f64::EPSILON));
    }

    #[test]
    fn piece_densities_are_normalised() {
        let raw = RawTriplet {
            horizon: 1.0,
            pieces: vec![RawPiece {
                start: 0.0,
                end: 1.0,
                drift: 2.0,
                diffusion: 1.0,
                jump_intensity: 3.0,
                kernel: JumpKernel::power_law(0.5, 1.0, 0.0, 1.0),
            }],
            atoms: vec![],
        };
        let env = canonicalize(&raw).unwrap();
        let p = env.timescale().pieces()[0];
        // 2 + 1 + 3 · (1/1.5)
        assert!((p.density - 5.0).abs() < 1e-14);
        assert!((env.piece_coeffs()[0].size() - 1.0).abs() < 1e-15);
        assert!(env.to_raw().same_measures(&raw, 4.0 * f64::EPSILON));
    }

    #[test]
    fn negative_diffusion_is_rejected() {
        let raw = RawTriplet {
            horizon: 1.0,
            pieces: vec![RawPiece {
                start: 0.0,
                end: 1.0,
                drift: 0.0,
                diffusion: -1.0,
                jump_intensity: 0.0,
                kernel: JumpKernel::zero(),
            }],
            atoms: vec![],
        };
        assert!(canonicalize(&raw).is_err());
    }
}
