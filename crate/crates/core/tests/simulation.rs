use cbve::discrete::{build_discrete_model, DiscreteModel, Pgf};
use cbve::expcli::builtin_scenario;
use cbve::simulate::{mc_laplace_check, simulate_trajectory};

#[test]
fn poisson_generation_has_the_right_mean() {
    let model = DiscreteModel::from_pgfs(1, vec![Pgf::poisson(1.0)]).unwrap();
    let reps = 10_000u64;
    let sizes: Vec<f64> = (0..reps)
        .map(|seed| simulate_trajectory(&model, 1000, &[1.0], seed).unwrap().generations[1] as f64)
        .collect();
    let mean = sizes.iter().sum::<f64>() / reps as f64;
    let var = sizes.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    assert!((mean - 1000.0).abs() <= 4.0 * se, "mean {mean}, se {se}");
    // Poisson(1000) in total
    assert!((var / 1000.0 - 1.0).abs() < 0.1, "variance {var}");
}

#[test]
fn identity_model_is_exact() {
    let model = DiscreteModel::from_pgfs(10, vec![Pgf::identity(); 4]).unwrap();
    let report = mc_laplace_check(&model, 0.7, &[1.0, 4.0], &[0.5, 2.0], 100, 3).unwrap();
    for cell in &report.cells {
        let expected = (-cell.lambda * 0.7f64).exp();
        assert!((cell.estimate - expected).abs() < 1e-15);
        assert!(cell.z.abs() < 1e-9);
    }
}

#[test]
fn doubling_is_exact() {
    let model = DiscreteModel::from_pgfs(8, vec![Pgf::quadratic(0.0, 0.0, 1.0)]).unwrap();
    let report = mc_laplace_check(&model, 1.0, &[1.0], &[1.0], 100, 3).unwrap();
    let cell = &report.cells[0];
    assert!((cell.estimate - (-2.0f64).exp()).abs() < 1e-15);
    assert!((cell.target - (-2.0f64).exp()).abs() < 1e-12);
    assert_eq!(cell.stderr, 0.0);
}

#[test]
fn branching_property_holds() {
    let env = builtin_scenario("atom-bottleneck").unwrap();
    let model = build_discrete_model(&env, 40, 0.5).unwrap();
    let one = mc_laplace_check(&model, 0.5, &[1.0], &[1.0], 20_000, 11).unwrap().cells[0].clone();
    let two = mc_laplace_check(&model, 1.0, &[1.0], &[1.0], 20_000, 12).unwrap().cells[0].clone();
    // (Ê)² has standard error about 2 Ê se
    let band = 4.0 * (two.stderr.powi(2) + (2.0 * one.estimate * one.stderr).powi(2)).sqrt();
    assert!((two.estimate - one.estimate.powi(2)).abs() <= band);
}

#[test]
fn reports_are_reproducible() {
    let env = builtin_scenario("heavy-tail").unwrap();
    let model = build_discrete_model(&env, 30, 0.5).unwrap();
    let run = || mc_laplace_check(&model, 1.0, &[0.5, 1.0], &[1.0], 3000, 5).unwrap();
    let (a, b) = (run(), run());
    for (x, y) in a.cells.iter().zip(&b.cells) {
        assert_eq!(x.estimate.to_bits(), y.estimate.to_bits());
        assert_eq!(x.stderr.to_bits(), y.stderr.to_bits());
    }
    assert!(a.cells.iter().all(|c| c.z.abs() <= 4.0));
}

#[test]
fn rejects_fractional_initial_population() {
    let env = builtin_scenario("feller").unwrap();
    let model = build_discrete_model(&env, 10, 0.5).unwrap();
    assert!(mc_laplace_check(&model, 0.55, &[1.0], &[1.0], 100, 1).is_err());
}
