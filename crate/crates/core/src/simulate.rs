//! Offspring laws of the constructed pgfs and Monte Carlo runs of the
//! Galton–Watson approximation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::cumulant::{solve_backward, CumulantError};
use crate::discrete::{Component, DiscreteError, DiscreteModel, Pgf};
use crate::environment::EnvironmentSpec;
use crate::quadrature::compensated_sum;
use crate::special::poisson_pmf;

pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-12;
/// Populations above this size stop the run.
pub const EXPLOSION_LIMIT: u64 = 1_000_000_000_000;
/// Extracted coefficients below this are treated as corruption.
const NEGATIVE_COEFFICIENT: f64 = -1e-12;
const MAX_SUPPORT: usize = 5_000_000;
/// Extraction also continues until the truncated mean is this close, relatively, to `g'(1)`.
const MEAN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("pgf coefficient {index} is {value} < 0")]
    CorruptPgf { index: usize, value: f64 },
    #[error("offspring law has tail {tail} beyond index {support}")]
    HeavyTail { support: usize, tail: f64 },
    #[error("population {value} exceeded the explosion limit at generation {generation}")]
    Explosion { generation: usize, value: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Discrete(#[from] DiscreteError),
    #[error(transparent)]
    Cumulant(#[from] CumulantError),
}

/// Sampling recipe for one offspring law: point masses at 0, 1, 2, Poisson
/// components and a residual law on a finite support.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    /// Nonzero mixture categories with their probability conditional on not
    /// falling in an earlier one; the last takes the remainder.
    steps: Vec<(Category, f64)>,
    residual: Option<WeightedAliasIndex<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Category {
    Point(u64),
    Poisson(f64),
    Residual,
}

/// Offspring law extracted from a pgf.
#[derive(Debug, Clone)]
pub struct OffspringPmf {
    /// `p_0, …, p_N`.
    pub probs: Vec<f64>,
    /// `1 - Σ p_n`.
    pub tail: f64,
    /// `g'(1)`.
    pub mean: f64,
    pub plan: SamplingPlan,
}

impl OffspringPmf {
    pub fn truncation(&self) -> usize {
        self.probs.len() - 1
    }

    /// `Σ n p_n`.
    pub fn pmf_mean(&self) -> f64 {
        compensated_sum(self.probs.iter().enumerate().map(|(n, p)| n as f64 * p))
    }
}

fn support_hint(g: &Pgf) -> usize {
    let mut top = 2.0f64;
    for c in &g.components {
        let rate = match *c {
            Component::Poisson { rate, .. } => rate,
            Component::JumpFamily { level, hi, .. } => level * hi.min(1e6),
        };
        top = top.max(rate + 40.0 * rate.sqrt() + 60.0);
    }
    (top.ceil() as usize).min(MAX_SUPPORT)
}

/// Exact coefficients of `g` up to a tail of at most `tail_tol`.
pub fn pgf_pmf(g: &Pgf, tail_tol: f64) -> Result<OffspringPmf, SimulateError> {
    if !(tail_tol > 0.0) {
        return Err(SimulateError::InvalidArgument(format!("tail tolerance {tail_tol} must be positive")));
    }
    let hint = support_hint(g);
    let mean = g.mean();
    let mean_slack = if mean.is_finite() { MEAN_TOLERANCE * mean.max(1.0) } else { f64::INFINITY };
    let mut probs = Vec::new();
    let mut total = 0.0;
    let mut partial_mean = 0.0;
    let mut n = 0usize;
    loop {
        let p = g.coefficient(n as u64);
        if p < NEGATIVE_COEFFICIENT || p.is_nan() {
            return Err(SimulateError::CorruptPgf { index: n, value: p });
        }
        let p = p.max(0.0);
        probs.push(p);
        total += p;
        partial_mean += n as f64 * p;
        n += 1;
        let settled = 1.0 - total <= tail_tol && mean - partial_mean <= mean_slack;
        if n >= 3 && settled && (n > hint / 4 || p == 0.0) {
            break;
        }
        if n > hint.max(MAX_SUPPORT / 100) {
            return Err(SimulateError::HeavyTail {
                support: n,
                tail: 1.0 - total,
            });
        }
    }
    let tail = (1.0 - compensated_sum(probs.iter().copied())).max(0.0);
    let plan = SamplingPlan::build(g, &probs)?;
    Ok(OffspringPmf {
        probs,
        tail,
        mean,
        plan,
    })
}

impl SamplingPlan {
    fn build(g: &Pgf, probs: &[f64]) -> Result<Self, SimulateError> {
        let len = probs.len();
        let mut poisson: Vec<(f64, f64)> = g
            .components
            .iter()
            .filter_map(|c| match *c {
                Component::Poisson { weight, rate } if weight > 0.0 => Some((weight, rate)),
                _ => None,
            })
            .collect();
        let pmfs: Vec<Vec<f64>> = poisson
            .iter()
            .map(|&(_, rate)| (0..len).map(|n| poisson_pmf(n as u64, rate)).collect())
            .collect();
        let explicit = |poisson: &[(f64, f64)], n: usize| -> f64 {
            poisson.iter().zip(&pmfs).map(|((w, _), pmf)| w * pmf[n]).sum()
        };
        // Shave Poisson weight into the residual where the point masses would go negative.
        for n in 0..3.min(len) {
            let mut order: Vec<usize> = (0..poisson.len()).collect();
            order.sort_by(|&a, &b| pmfs[b][n].total_cmp(&pmfs[a][n]));
            for j in order {
                let base = probs[n] - explicit(&poisson, n);
                if base >= 0.0 {
                    break;
                }
                if pmfs[j][n] > 0.0 {
                    let shave = (-base / pmfs[j][n] * (1.0 + 1e-12)).min(poisson[j].0);
                    poisson[j].0 -= shave;
                }
            }
        }
        let mut residual: Vec<f64> = (0..len).map(|n| (probs[n] - explicit(&poisson, n)).max(0.0)).collect();
        let mut points = [0.0; 3];
        for n in 0..3.min(len) {
            // keep in the residual only what point masses cannot carry
            let carried = match n {
                0 => g.constant,
                1 => g.linear,
                _ => g.quadratic,
            }
            .max(0.0)
            .min(residual[n]);
            points[n] = carried;
            residual[n] -= carried;
        }
        let residual_weight = compensated_sum(residual.iter().copied());
        let mut cats: Vec<(Category, f64)> = (0..3u64).map(|n| (Category::Point(n), points[n as usize])).collect();
        cats.extend(poisson.iter().map(|&(w, rate)| (Category::Poisson(rate), w)));
        cats.push((Category::Residual, residual_weight));
        cats.retain(|c| c.1 > 0.0);
        // the heaviest category goes last and absorbs the remainder
        if let Some(heaviest) = (0..cats.len()).max_by(|&a, &b| cats[a].1.total_cmp(&cats[b].1)) {
            let last = cats.len() - 1;
            cats.swap(heaviest, last);
        }
        let mut mass: f64 = cats.iter().map(|c| c.1).sum();
        let mut steps = Vec::with_capacity(cats.len());
        for (i, &(cat, w)) in cats.iter().enumerate() {
            let p = if i + 1 == cats.len() { 1.0 } else { (w / mass).clamp(0.0, 1.0) };
            steps.push((cat, p));
            mass -= w;
        }
        let residual = if residual_weight > 0.0 {
            Some(WeightedAliasIndex::new(residual).map_err(|e| {
                SimulateError::InvalidArgument(format!("residual law cannot be sampled: {e}"))
            })?)
        } else {
            None
        };
        Ok(Self { steps, residual })
    }

    /// Sum of `z` independent offspring counts.
    pub fn sample_sum<R: Rng + ?Sized>(&self, z: u64, rng: &mut R) -> u64 {
        let mut left = z;
        let mut sum = 0u64;
        let mut rate_total = 0.0;
        for &(cat, p) in &self.steps {
            if left == 0 {
                break;
            }
            let count = if p >= 1.0 {
                left
            } else {
                Binomial::new(left, p).map_or(0, |b| b.sample(rng))
            };
            left -= count;
            if count == 0 {
                continue;
            }
            match cat {
                Category::Point(n) => sum += n * count,
                Category::Poisson(rate) => rate_total += count as f64 * rate,
                Category::Residual => {
                    if let Some(alias) = &self.residual {
                        for _ in 0..count {
                            sum += alias.sample(rng) as u64;
                        }
                    }
                }
            }
        }
        if rate_total > 0.0 {
            if let Ok(p) = Poisson::new(rate_total) {
                let draw: f64 = p.sample(rng);
                sum = sum.saturating_add(draw as u64);
            }
        }
        sum
    }
}

/// Sampling plans for every stored pgf of a model.
pub struct Sampler<'a> {
    model: &'a DiscreteModel,
    plans: Vec<SamplingPlan>,
    /// Plan index per generation; `None` for identity generations.
    slots: Vec<Option<usize>>,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a DiscreteModel, tail_tol: f64) -> Result<Self, SimulateError> {
        let mut plans = Vec::new();
        let mut slots = vec![None; model.generations()];
        let mut built: Vec<*const Pgf> = Vec::new();
        for (n, slot) in slots.iter_mut().enumerate() {
            let g = model.pgf(n);
            if g.is_identity() {
                continue;
            }
            *slot = Some(match built.iter().position(|&p| std::ptr::eq(p, g)) {
                Some(i) => i,
                None => {
                    plans.push(pgf_pmf(g, tail_tol)?.plan);
                    built.push(g);
                    plans.len() - 1
                }
            });
        }
        Ok(Self { model, plans, slots })
    }

    pub fn model(&self) -> &DiscreteModel {
        self.model
    }

    fn rng(seed: u64, replicate: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replicate);
        rng
    }

    /// Population sizes at the given generations (increasing), starting from `z0` at generation 0.
    pub fn run(&self, z0: u64, checkpoints: &[usize], seed: u64, replicate: u64) -> Result<Vec<u64>, SimulateError> {
        let mut rng = Self::rng(seed, replicate);
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut z = z0;
        let mut next = 0;
        let end = checkpoints.last().copied().unwrap_or(0);
        for n in 0..=end {
            while next < checkpoints.len() && checkpoints[next] == n {
                out.push(z);
                next += 1;
            }
            if n == end || z == 0 {
                continue;
            }
            if let Some(i) = self.slots[n] {
                z = self.plans[i].sample_sum(z, &mut rng);
                if z > EXPLOSION_LIMIT {
                    return Err(SimulateError::Explosion { generation: n + 1, value: z });
                }
            }
        }
        while out.len() < checkpoints.len() {
            out.push(z);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub k: u64,
    pub z0: u64,
    pub seed: u64,
    /// `Z_k(n)` for `n = 0..=γ_k(T)`.
    pub generations: Vec<u64>,
    pub times: Vec<f64>,
    /// `X_k(s) = Z_k(γ_k(s)) / k` on `times`.
    pub scaled: Vec<f64>,
}

/// One trajectory of the level-`k` chain started from `z0` individuals.
pub fn simulate_trajectory(
    model: &DiscreteModel,
    z0: u64,
    time_grid: &[f64],
    seed: u64,
) -> Result<Trajectory, SimulateError> {
    let horizon = model.time().timescale().horizon();
    if time_grid.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
        return Err(SimulateError::InvalidArgument(format!("time grid must lie in [0, {horizon}]")));
    }
    let sampler = Sampler::new(model, DEFAULT_TAIL_TOLERANCE)?;
    let all: Vec<usize> = (0..=model.generations()).collect();
    let generations = sampler.run(z0, &all, seed, 0)?;
    let kf = model.level() as f64;
    let scaled = time_grid
        .iter()
        .map(|&t| generations[model.time().gamma_k(t).min(model.generations())] as f64 / kf)
        .collect();
    Ok(Trajectory {
        k: model.level(),
        z0,
        seed,
        generations,
        times: time_grid.to_vec(),
        scaled,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct McCell {
    pub t: f64,
    pub lambda: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// `v_k(0, t; λ)`.
    pub exact_vk: f64,
    /// `e^{-x0 v_k(0, t; λ)}`.
    pub target: f64,
    pub z: f64,
    /// `v(0, t; λ)` of the limit, when requested.
    pub limit_v: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub k: u64,
    pub x0: f64,
    pub replicates: u64,
    pub seed: u64,
    pub explosions: u64,
    pub cells: Vec<McCell>,
}

impl McReport {
    /// Fills `limit_v` from the limit cumulant of `env`.
    pub fn with_limit(mut self, env: &EnvironmentSpec, tol: f64) -> Result<Self, SimulateError> {
        for cell in &mut self.cells {
            cell.limit_v = Some(solve_backward(env, 0.0, cell.t, cell.lambda, tol)?.value);
        }
        Ok(self)
    }

    /// `|Ê - e^{-x0 v}|` per cell, once limits are filled.
    pub fn limit_gaps(&self) -> Vec<Option<f64>> {
        self.cells
            .iter()
            .map(|c| c.limit_v.map(|v| (c.estimate - (-self.x0 * v).exp()).abs()))
            .collect()
    }
}

/// Per-cell sums of deviations and squared deviations, and the explosion count.
type ChunkSums = (Vec<f64>, Vec<f64>, u64);

/// Replicates handled by one unit of parallel work; fixed so that sums do
/// not depend on the thread count.
const CHUNK: u64 = 1024;

/// Estimates `E[e^{-λ X_k(t)}]` from `k x0` initial individuals over `replicates` runs.
pub fn mc_laplace_check(
    model: &DiscreteModel,
    x0: f64,
    t_list: &[f64],
    lambda_list: &[f64],
    replicates: u64,
    seed: u64,
) -> Result<McReport, SimulateError> {
    let kf = model.level() as f64;
    let z0 = (kf * x0).round();
    if !(x0 >= 0.0) || (z0 - kf * x0).abs() > 1e-9 * z0.max(1.0) {
        return Err(SimulateError::InvalidArgument(format!("k x0 = {} must be an integer", kf * x0)));
    }
    if replicates == 0 {
        return Err(SimulateError::InvalidArgument("need at least one replicate".into()));
    }
    let horizon = model.time().timescale().horizon();
    if t_list.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
        return Err(SimulateError::InvalidArgument(format!("times must lie in [0, {horizon}]")));
    }
    let z0 = z0 as u64;
    let sampler = Sampler::new(model, DEFAULT_TAIL_TOLERANCE)?;
    let gens: Vec<usize> = t_list
        .iter()
        .map(|&t| model.time().gamma_k(t).min(model.generations()))
        .collect();
    let mut checkpoints = gens.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let slot: Vec<usize> = gens.iter().map(|g| checkpoints.binary_search(g).unwrap()).collect();
    let cells = t_list.len() * lambda_list.len();
    let mut targets = Vec::with_capacity(cells);
    for &t in t_list {
        for &lambda in lambda_list {
            let exact_vk = model.cumulant(0.0, t, lambda)?;
            targets.push((exact_vk, (-x0 * exact_vk).exp()));
        }
    }

    let chunks: Vec<u64> = (0..replicates.div_ceil(CHUNK)).collect();
    let partials: Vec<Result<ChunkSums, SimulateError>> = chunks
        .par_iter()
        .map(|&c| {
            let mut deviations = vec![Vec::new(); cells];
            let mut explosions = 0;
            for rep in c * CHUNK..((c + 1) * CHUNK).min(replicates) {
                let sizes = match sampler.run(z0, &checkpoints, seed, rep) {
                    Ok(s) => Some(s),
                    Err(SimulateError::Explosion { .. }) => None,
                    Err(e) => return Err(e),
                };
                if sizes.is_none() {
                    explosions += 1;
                }
                for (ti, &s) in slot.iter().enumerate() {
                    for (li, &lambda) in lambda_list.iter().enumerate() {
                        let i = ti * lambda_list.len() + li;
                        // an exploded population has Laplace functional 0
                        let v = sizes.as_ref().map_or(0.0, |z| (-lambda * (z[s] as f64 / kf)).exp());
                        deviations[i].push(v - targets[i].1);
                    }
                }
            }
            let sums = deviations.iter().map(|d| compensated_sum(d.iter().copied())).collect();
            let squares = deviations.iter().map(|d| compensated_sum(d.iter().map(|x| x * x))).collect();
            Ok((sums, squares, explosions))
        })
        .collect();
    let mut sums = vec![Vec::new(); cells];
    let mut squares = vec![Vec::new(); cells];
    let mut explosions = 0;
    for p in partials {
        let (s, q, e) = p?;
        for i in 0..cells {
            sums[i].push(s[i]);
            squares[i].push(q[i]);
        }
        explosions += e;
    }
    let r = replicates as f64;
    let mut out = Vec::with_capacity(cells);
    for (ti, &t) in t_list.iter().enumerate() {
        for (li, &lambda) in lambda_list.iter().enumerate() {
            let i = ti * lambda_list.len() + li;
            let (exact_vk, target) = targets[i];
            let total = compensated_sum(sums[i].iter().copied());
            let diff = total / r;
            let var = if replicates > 1 {
                ((compensated_sum(squares[i].iter().copied()) - total * diff) / (r - 1.0)).max(0.0)
            } else {
                0.0
            };
            let stderr = (var / r).sqrt();
            let z = if stderr > 0.0 {
                diff / stderr
            } else if diff.abs() <= 1e-12 {
                0.0
            } else {
                diff.signum() * f64::INFINITY
            };
            out.push(McCell {
                t,
                lambda,
                estimate: target + diff,
                stderr,
                exact_vk,
                target,
                z,
                limit_v: None,
            });
        }
    }
    Ok(McReport {
        k: model.level(),
        x0,
        replicates,
        seed,
        explosions,
        cells: out,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChiSquareResult {
    pub draws: u64,
    pub bins: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// Pearson goodness of fit of `draws` single-individual samples against the
/// extracted pmf; bins with expected count below 5 are pooled.
pub fn chi_square_check(pmf: &OffspringPmf, draws: u64, seed: u64) -> ChiSquareResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; pmf.probs.len() + 1];
    for _ in 0..draws {
        let x = pmf.plan.sample_sum(1, &mut rng) as usize;
        counts[x.min(pmf.probs.len())] += 1;
    }
    let n = draws as f64;
    let mut expected: Vec<f64> = pmf.probs.iter().map(|p| p * n).collect();
    expected.push(pmf.tail * n);
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut e_acc, mut o_acc) = (0.0, 0.0);
    for (e, &o) in expected.iter().zip(&counts) {
        e_acc += e;
        o_acc += o as f64;
        if e_acc >= 5.0 {
            bins.push((e_acc, o_acc));
            e_acc = 0.0;
            o_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += e_acc;
                last.1 += o_acc;
            }
            None => bins.push((e_acc, o_acc)),
        }
    }
    let statistic: f64 = bins.iter().map(|(e, o)| (o - e) * (o - e) / e).sum();
    let dof = bins.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).map_or(f64::NAN, |d| d.sf(statistic))
    };
    ChiSquareResult {
        draws,
        bins: bins.len(),
        statistic,
        p_value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_pmf_extraction() {
        let pmf = pgf_pmf(&Pgf::poisson(0.5), 1e-12).unwrap();
        assert!((pmf.probs[0] - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert!((pmf.probs[1] - 0.303_265_329_856_316_7).abs() < 1e-15);
        assert!(pmf.tail <= 1e-12);
        assert!((pmf.pmf_mean() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn quadratic_and_identity() {
        let pmf = pgf_pmf(&Pgf::quadratic(0.2, 0.6, 0.2), 1e-12).unwrap();
        assert_eq!(&pmf.probs[..3], &[0.2, 0.6, 0.2]);
        let id = pgf_pmf(&Pgf::identity(), 1e-12).unwrap();
        assert_eq!(id.probs[1], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(id.plan.sample_sum(37, &mut rng), 37);
    }

    #[test]
    fn negative_coefficients_are_rejected() {
        assert!(matches!(
            pgf_pmf(&Pgf::quadratic(-0.1, 1.0, 0.1), 1e-12),
            Err(SimulateError::CorruptPgf { index: 0, .. })
        ));
    }

    #[test]
    fn doubling_is_deterministic() {
        let model = DiscreteModel::from_pgfs(1, vec![Pgf::quadratic(0.0, 0.0, 1.0); 3]).unwrap();
        let traj = simulate_trajectory(&model, 1, &[0.0, 3.0], 9).unwrap();
        assert_eq!(traj.generations, vec![1, 2, 4, 8]);
        assert_eq!(traj.scaled, vec![1.0, 8.0]);
    }

    #[test]
    fn shaved_plan_matches_pmf() {
        // constant -w absorbed by the low-rate Poisson part, as at an atom step
        let w = 0.01;
        let g = Pgf {
            constant: -w,
            linear: 0.0,
            quadratic: 0.0,
            components: vec![
                Component::Poisson { weight: 1.0, rate: 0.5 },
                Component::Poisson { weight: w, rate: 40.0 },
            ],
        };
        let pmf = pgf_pmf(&g, 1e-12).unwrap();
        let res = chi_square_check(&pmf, 200_000, 3);
        assert!(res.p_value > 1e-4, "{res:?}");
    }
}
