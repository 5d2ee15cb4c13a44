use std::sync::OnceLock;

use proptest::prelude::*;

use cbve::cumulant::solve_backward;
use cbve::discrete::{build_discrete_model, h_k, small_phi, small_phi_via_big, DiscreteModel, Stage};
use cbve::environment::EnvironmentSpec;
use cbve::expcli::{builtin_scenario, SCENARIOS};
use cbve::simulate::{pgf_pmf, simulate_trajectory};

const TOL: f64 = 1e-10;

struct Fixture {
    name: &'static str,
    env: EnvironmentSpec,
    model: DiscreteModel,
}

fn fixtures() -> &'static [Fixture] {
    static CELL: OnceLock<Vec<Fixture>> = OnceLock::new();
    CELL.get_or_init(|| {
        SCENARIOS
            .iter()
            .map(|&name| {
                let env = builtin_scenario(name).unwrap();
                let model = build_discrete_model(&env, 60, 0.5).unwrap();
                Fixture { name, env, model }
            })
            .collect()
    })
}

fn ordered(a: f64, b: f64, c: f64) -> (f64, f64, f64) {
    let mut v = [a, b, c];
    v.sort_by(f64::total_cmp);
    (v[0], v[1], v[2])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn limit_cumulant_flow(idx in 0usize..5, a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64, lambda in 0.1..3.0f64) {
        let f = &fixtures()[idx];
        let (r, s, t) = ordered(a, b, c);
        let direct = solve_backward(&f.env, r, t, lambda, TOL).unwrap().value;
        let inner = solve_backward(&f.env, s, t, lambda, TOL).unwrap().value;
        let composed = solve_backward(&f.env, r, s, inner, TOL).unwrap().value;
        prop_assert!((direct - composed).abs() <= 1e-8, "{}: {direct} vs {composed}", f.name);
    }

    #[test]
    fn discrete_cumulant_flow(idx in 0usize..5, a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64, lambda in 0.1..3.0f64) {
        let f = &fixtures()[idx];
        let (r, s, t) = ordered(a, b, c);
        let direct = f.model.cumulant(r, t, lambda).unwrap();
        let composed = f.model.cumulant(r, s, f.model.cumulant(s, t, lambda).unwrap()).unwrap();
        prop_assert!((direct - composed).abs() <= 1e-12 * direct.abs().max(1e-300), "{}: {direct} vs {composed}", f.name);
    }

    #[test]
    fn cumulants_increase_in_lambda(idx in 0usize..5, a in 0.0..1.0f64, b in 0.0..1.0f64, lo in 0.1..2.0f64, step in 0.01..1.0f64) {
        let f = &fixtures()[idx];
        let (r, t) = if a <= b { (a, b) } else { (b, a) };
        let hi = lo + step;
        let v = |l| solve_backward(&f.env, r, t, l, TOL).unwrap().value;
        prop_assert!(v(lo) < v(hi));
        prop_assert!(f.model.cumulant(r, t, lo).unwrap() < f.model.cumulant(r, t, hi).unwrap());
        prop_assert!(v(lo) > 0.0);
    }

    #[test]
    fn h_k_is_a_contraction(k in 1u64..5000, z in 0.0..100.0f64) {
        let h = h_k(k, z);
        prop_assert!(h >= 0.0 && h <= z);
        prop_assert!(z - h <= z * z / (2.0 * k as f64) * (1.0 + 1e-12) + 1e-15);
        prop_assert!(h_k(k, z + 0.5) > h);
    }

    #[test]
    fn constructed_pgfs_are_proper(idx in 0usize..5, k in 2u64..400) {
        let f = &fixtures()[idx];
        let model = build_discrete_model(&f.env, k, 0.5).unwrap();
        prop_assert!(model.downgrades().is_empty());
        for (_, g) in model.distinct_pgfs() {
            prop_assert!((g.eval(1.0) - 1.0).abs() <= 1e-12);
            prop_assert!(g.min_coefficient() >= -1e-14);
            let pmf = pgf_pmf(g, 1e-12).unwrap();
            prop_assert!((pmf.pmf_mean() - g.mean()).abs() <= 1e-9 * g.mean().max(1.0));
        }
    }

    #[test]
    fn phi_routes_agree(idx in 0usize..4, s in 0.01..1.0f64, lambda in 0.1..3.0f64, jump in proptest::bool::ANY) {
        let f = &fixtures()[idx];
        let stage = if jump { Stage::Jump } else { Stage::Cell };
        let direct = small_phi(&f.model, s, lambda, stage).unwrap();
        let via = small_phi_via_big(&f.model, s, lambda, stage).unwrap();
        prop_assert!((direct - via).abs() <= 1e-9 * direct.abs().max(1.0), "{direct} vs {via}");
    }

    #[test]
    fn trajectories_are_reproducible_and_absorbed(idx in 0usize..4, seed in 0u64..1000, z0 in 0u64..30) {
        let f = &fixtures()[idx];
        let grid = [0.0, 0.5, 1.0];
        let one = simulate_trajectory(&f.model, z0, &grid, seed).unwrap();
        let two = simulate_trajectory(&f.model, z0, &grid, seed).unwrap();
        prop_assert_eq!(&one.generations, &two.generations);
        if let Some(first) = one.generations.iter().position(|&z| z == 0) {
            prop_assert!(one.generations[first..].iter().all(|&z| z == 0));
        }
    }
}
