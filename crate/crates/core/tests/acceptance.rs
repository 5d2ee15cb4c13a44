//! Acceptance run: one line per criterion, then a single assertion.
//!
//! Runtime budgets refer to an 8-core machine; on fewer cores they are
//! scaled by `8 / cores` and both numbers are printed.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cbve::cumulant::{envelope_bounds, solve_backward};
use cbve::discrete::{
    build_discrete_model, condition_a_residuals, convergence_report, ConvergenceSettings, DiscreteModel, GridSpec,
};
use cbve::environment::{Coefficients, EnvironmentBuilder, EnvironmentSpec};
use cbve::expcli::{builtin_scenario, SCENARIOS};
use cbve::simulate::{chi_square_check, mc_laplace_check, pgf_pmf, McReport};

const TOL: f64 = 1e-10;
const K_LIST: [u64; 3] = [50, 200, 800];
const CONVERGENCE_SCENARIOS: [&str; 4] = ["feller", "linear-drift", "atom-bottleneck", "heavy-tail"];
const SEED: u64 = 20_261_016;

/// Sup-grid errors for k = 50, 200, 800 recorded on the first verified run.
const FROZEN_ERRORS: [(&str, [f64; 3]); 4] = [
    ("feller", [4.3685615289102087e-2, 1.6063046889415178e-2, 6.0840120289331612e-3]),
    ("linear-drift", [8.2387210264532662e-2, 3.1839094340356588e-2, 1.2293202460073038e-2]),
    ("atom-bottleneck", [6.4501855401939423e-2, 2.5973565838080637e-2, 1.0351018987043936e-2]),
    ("heavy-tail", [7.5988678419548483e-2, 3.0386629019532041e-2, 1.2036130855872074e-2]),
];
const FROZEN_RELATIVE: f64 = 1e-8;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

struct Budget {
    scale: f64,
    cores: usize,
}

impl Budget {
    fn new() -> Self {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self {
            scale: (8.0 / cores as f64).max(1.0),
            cores,
        }
    }

    /// `(within budget, description)` for a reference budget in seconds.
    fn check(&self, elapsed: Duration, reference: f64) -> (bool, String) {
        let allowed = reference * self.scale;
        let secs = elapsed.as_secs_f64();
        let text = if self.scale > 1.0 {
            format!("{secs:.1} s (budget {reference} s on 8 cores, {allowed:.0} s on {})", self.cores)
        } else {
            format!("{secs:.1} s (budget {reference} s)")
        };
        (secs <= allowed, text)
    }
}

fn scenario(name: &str) -> EnvironmentSpec {
    builtin_scenario(name).unwrap()
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn criterion_1(budget: &Budget) -> Outcome {
    let start = Instant::now();
    let single_atom = EnvironmentBuilder::new(1.0)
        .piece(0.0, 1.0, 1.0, Coefficients::default())
        .atom(0.5, 0.5, Coefficients::drift(1.0))
        .build()
        .unwrap();
    let drift = scenario("linear-drift");
    let feller = scenario("feller");
    let bottleneck = scenario("atom-bottleneck");
    let times = [0.0, 0.2, 0.5, 0.7, 1.0];
    let mut worst = 0.0f64;
    for &lambda in &[0.1, 0.5, 1.0, 2.0, 5.0] {
        for (i, &r) in times.iter().enumerate() {
            for &t in &times[i..] {
                let dt = t - r;
                let crosses = r < 0.5 && t >= 0.5;
                let atom_factor = if crosses { 0.5 } else { 1.0 };
                let v = |env: &EnvironmentSpec| solve_backward(env, r, t, lambda, TOL).unwrap().value;
                worst = worst.max(relative(v(&drift), lambda * (-dt).exp()));
                worst = worst.max(relative(v(&feller), lambda / (1.0 + lambda * dt)));
                worst = worst.max(relative(v(&single_atom), lambda * atom_factor));
                // diffusion 0.5 on both sides of the atom
                let expected = if crosses {
                    let after = lambda / (1.0 + 0.5 * lambda * (t - 0.5));
                    let jumped = 0.5 * after;
                    jumped / (1.0 + 0.5 * jumped * (0.5 - r))
                } else {
                    lambda / (1.0 + 0.5 * lambda * dt)
                };
                worst = worst.max(relative(v(&bottleneck), expected));
            }
        }
    }
    let (fast, time) = budget.check(start.elapsed(), 1.0);
    Outcome {
        id: 1,
        name: "cumulant oracles",
        pass: worst <= 1e-8 && fast,
        detail: format!("max relative error {worst:.2e} (<= 1e-8); {time}"),
    }
}

fn criterion_2(budget: &Budget) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst_limit, mut worst_discrete) = (0.0f64, 0.0f64);
    for name in SCENARIOS {
        let env = scenario(name);
        let model = build_discrete_model(&env, 200, 0.5).unwrap();
        for _ in 0..200 {
            let mut triple = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            triple.sort_by(f64::total_cmp);
            let [r, s, t] = triple;
            let lambda = rng.random_range(0.5..2.0);
            let direct = solve_backward(&env, r, t, lambda, TOL).unwrap().value;
            let inner = solve_backward(&env, s, t, lambda, TOL).unwrap().value;
            let composed = solve_backward(&env, r, s, inner, TOL).unwrap().value;
            worst_limit = worst_limit.max((direct - composed).abs());
            let direct = model.cumulant(r, t, lambda).unwrap();
            let composed = model.cumulant(r, s, model.cumulant(s, t, lambda).unwrap()).unwrap();
            worst_discrete = worst_discrete.max(relative(composed, direct));
        }
    }
    let (fast, time) = budget.check(start.elapsed(), 10.0);
    Outcome {
        id: 2,
        name: "flow property",
        pass: worst_limit <= 1e-8 && worst_discrete <= 1e-12 && fast,
        detail: format!(
            "limit {worst_limit:.2e} (<= 1e-8), discrete relative {worst_discrete:.2e} (<= 1e-12) over 5 x 200 triples; {time}"
        ),
    }
}

fn criterion_3(budget: &Budget) -> Outcome {
    let start = Instant::now();
    let settings = ConvergenceSettings::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, frozen) in FROZEN_ERRORS {
        let report = convergence_report(&scenario(name), &K_LIST, 1.0, 0.5, 2.0, &settings).unwrap();
        let errors: Vec<f64> = report.levels.iter().map(|l| l.sup_error).collect();
        let decreasing = errors.windows(2).all(|w| w[0] > w[1]);
        let ratio = errors[0] / errors[2];
        let drift = errors
            .iter()
            .zip(frozen)
            .map(|(&e, f)| relative(e, f))
            .fold(0.0, f64::max);
        pass &= decreasing && ratio > 3.0 && drift <= FROZEN_RELATIVE;
        parts.push(format!(
            "{name} {:.3e}/{:.3e}/{:.3e} ratio {ratio:.2} baseline drift {drift:.1e}",
            errors[0], errors[1], errors[2]
        ));
    }
    let (fast, time) = budget.check(start.elapsed(), 120.0);
    Outcome {
        id: 3,
        name: "sup-grid convergence",
        pass: pass && fast,
        detail: format!("{}; {time}", parts.join("; ")),
    }
}

fn criterion_4(budget: &Budget) -> Outcome {
    let start = Instant::now();
    let settings = ConvergenceSettings::default();
    let mut violations = 0;
    let mut points = 0;
    for name in SCENARIOS {
        let report = convergence_report(&scenario(name), &[800], 1.0, 0.5, 2.0, &settings).unwrap();
        violations += report.levels[0].corridor_violations;
        points += report.levels[0].corridor_points;
    }
    let (fast, time) = budget.check(start.elapsed(), 30.0);
    Outcome {
        id: 4,
        name: "envelope corridor",
        pass: violations == 0 && points > 0 && fast,
        detail: format!("{violations} violations in {points} grid values at k = 800; {time}"),
    }
}

fn criterion_5(budget: &Budget) -> Outcome {
    let start = Instant::now();
    let lambdas = GridSpec::default().lambdas(0.5, 2.0);
    let mut pass = true;
    let mut parts = Vec::new();
    for name in CONVERGENCE_SCENARIOS {
        let env = scenario(name);
        let tables: Vec<_> = K_LIST
            .iter()
            .map(|&k| {
                let model = build_discrete_model(&env, k, 0.5).unwrap();
                condition_a_residuals(&model, &env, 0.0, 1.0, &lambdas).unwrap()
            })
            .collect();
        let totals: Vec<f64> = tables.iter().map(|t| t.total).collect();
        let last = &tables[2];
        let bound = last.cell_bound + last.jump_bound;
        // the bound is attained exactly when every cell is pure diffusion
        let below = last.total <= bound * (1.0 + 1e-12);
        pass &= totals.windows(2).all(|w| w[0] > w[1]) && below;
        parts.push(format!(
            "{name} {:.3e}/{:.3e}/{:.3e}, bound {bound:.3e}",
            totals[0], totals[1], totals[2]
        ));
    }
    let null = scenario("null");
    let null_total = condition_a_residuals(&build_discrete_model(&null, 800, 0.5).unwrap(), &null, 0.0, 1.0, &lambdas)
        .unwrap()
        .total;
    pass &= null_total == 0.0;
    let (fast, time) = budget.check(start.elapsed(), 60.0);
    Outcome {
        id: 5,
        name: "residual decay",
        pass: pass && fast,
        detail: format!("{}; null {null_total}; {time}", parts.join("; ")),
    }
}

struct McRuns {
    /// `(scenario, reports for k = 50, 200, 800)`.
    sweeps: Vec<(&'static str, Vec<McReport>)>,
    sweep_time: Duration,
    extra: Vec<McReport>,
    extra_time: Duration,
}

fn run_monte_carlo() -> McRuns {
    let start = Instant::now();
    let mut sweeps = Vec::new();
    for (name, replicates) in [("feller", 200_000), ("atom-bottleneck", 200_000)] {
        let env = scenario(name);
        let reports = K_LIST
            .iter()
            .map(|&k| {
                let model = build_discrete_model(&env, k, 0.5).unwrap();
                mc_laplace_check(&model, 4.0, &[0.75, 1.0], &[1.0, 2.0], replicates, SEED)
                    .unwrap()
                    .with_limit(&env, TOL)
                    .unwrap()
            })
            .collect();
        sweeps.push((name, reports));
    }
    let sweep_time = start.elapsed();
    let start = Instant::now();
    let env = scenario("heavy-tail");
    let model = build_discrete_model(&env, 200, 0.5).unwrap();
    let extra = vec![mc_laplace_check(&model, 1.0, &[0.25, 0.5, 0.75, 1.0], &[0.5, 1.0, 2.0], 100_000, SEED).unwrap()];
    McRuns {
        sweeps,
        sweep_time,
        extra,
        extra_time: start.elapsed(),
    }
}

fn criterion_6(budget: &Budget, runs: &McRuns) -> Outcome {
    let start = Instant::now();
    let cells: Vec<f64> = runs
        .sweeps
        .iter()
        .flat_map(|(_, reports)| reports.iter())
        .chain(&runs.extra)
        .flat_map(|r| r.cells.iter().map(|c| c.z))
        .collect();
    let within = cells.iter().filter(|z| z.abs() <= 4.0).count();
    let share = within as f64 / cells.len() as f64;
    let max_z = cells.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    let explosions: u64 = runs
        .sweeps
        .iter()
        .flat_map(|(_, r)| r.iter())
        .chain(&runs.extra)
        .map(|r| r.explosions)
        .sum();

    let mut tested = 0;
    let mut worst_p = 1.0f64;
    for name in SCENARIOS {
        let model: DiscreteModel = build_discrete_model(&scenario(name), 800, 0.5).unwrap();
        for (n, g) in model.distinct_pgfs() {
            let pmf = pgf_pmf(g, 1e-12).unwrap();
            let result = chi_square_check(&pmf, 1_000_000, SEED + n as u64);
            worst_p = worst_p.min(result.p_value);
            tested += 1;
        }
    }
    let (fast, time) = budget.check(runs.extra_time + start.elapsed(), 300.0);
    Outcome {
        id: 6,
        name: "sampler exactness",
        pass: share >= 0.95 && worst_p > 1e-4 && fast,
        detail: format!(
            "{within}/{} cells with |z| <= 4 (max {max_z:.2}), {explosions} explosions; \
             chi-square min p {worst_p:.3} over {tested} pgfs; {time}",
            cells.len()
        ),
    }
}

fn criterion_7(budget: &Budget, runs: &McRuns) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, reports) in &runs.sweeps {
        let gaps: Vec<Vec<f64>> = reports
            .iter()
            .map(|r| r.limit_gaps().into_iter().map(Option::unwrap).collect())
            .collect();
        for (i, cell) in reports[0].cells.iter().enumerate() {
            let series = [gaps[0][i], gaps[1][i], gaps[2][i]];
            let ok = series[0] > series[1] && series[1] > series[2];
            pass &= ok;
            parts.push(format!(
                "{name} t={} λ={}: {:.2e}/{:.2e}/{:.2e}{}",
                cell.t,
                cell.lambda,
                series[0],
                series[1],
                series[2],
                if ok { "" } else { " NOT DECREASING" }
            ));
        }
    }
    let (fast, time) = budget.check(runs.sweep_time, 300.0);
    Outcome {
        id: 7,
        name: "finite-dimensional convergence",
        pass: pass && fast,
        detail: format!("{}; {time}", parts.join("; ")),
    }
}

fn criterion_8(budget: &Budget) -> Outcome {
    let start = Instant::now();
    let mut total = 0;
    let mut failing = 0;
    let mut downgrades = 0;
    for name in SCENARIOS {
        let model = build_discrete_model(&scenario(name), 800, 0.5).unwrap();
        downgrades += model.downgrades().len();
        for (_, g) in model.distinct_pgfs() {
            total += 1;
            let normalized = (g.eval(1.0) - 1.0).abs() <= 1e-12;
            let nonnegative = g.min_coefficient() >= -1e-14;
            let consistent = match pgf_pmf(g, 1e-12) {
                Ok(pmf) => (pmf.pmf_mean() - g.mean()).abs() <= 1e-9 * g.mean().max(1.0),
                Err(_) => false,
            };
            if !(normalized && nonnegative && consistent) {
                failing += 1;
            }
        }
    }
    let (fast, time) = budget.check(start.elapsed(), 60.0);
    Outcome {
        id: 8,
        name: "pgf validity",
        pass: failing == 0 && downgrades == 0 && total > 0 && fast,
        detail: format!("{failing} of {total} distinct pgfs invalid, {downgrades} downgrades at k = 800; {time}"),
    }
}

#[test]
fn acceptance() {
    let budget = Budget::new();
    let envelope = envelope_bounds(&scenario("feller"), 1.0, 0.5, 2.0, 2.0).unwrap();
    assert!(envelope.lower > 0.0 && envelope.upper.is_finite());

    let mut outcomes = vec![
        criterion_1(&budget),
        criterion_2(&budget),
        criterion_3(&budget),
        criterion_4(&budget),
        criterion_5(&budget),
    ];
    let runs = run_monte_carlo();
    outcomes.push(criterion_6(&budget, &runs));
    outcomes.push(criterion_7(&budget, &runs));
    outcomes.push(criterion_8(&budget));

    for o in &outcomes {
        println!(
            "[{}] criterion {} {}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail
        );
    }
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
