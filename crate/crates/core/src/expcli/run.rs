//! Sweeps over `k` and the files they produce.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{Experiment, ExperimentConfig, Overrides, OUT_DIR_ENV};
use super::ExpError;
use crate::cumulant::{envelope_bounds, EnvelopeConstants};
use crate::discrete::{build_discrete_model, condition_a_residuals, level_error, limit_grid, Downgrade, LevelError};
use crate::environment::{EnvironmentDescription, Violation};
use crate::simulate::{mc_laplace_check, McReport};

/// A result together with the operation and inputs that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct Traced<T> {
    pub module: &'static str,
    pub operation: &'static str,
    pub inputs: Value,
    pub result: T,
}

fn traced<T>(module: &'static str, operation: &'static str, inputs: Value, result: T) -> Traced<T> {
    Traced {
        module,
        operation,
        inputs,
        result,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualSummary {
    pub k: u64,
    pub jumps: usize,
    pub total: f64,
    pub cell_total: f64,
    pub jump_total: f64,
    pub cell_bound: f64,
    pub jump_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub stage: String,
    pub k: Option<u64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub k: u64,
    pub error: Traced<LevelError>,
    pub residuals: Traced<ResidualSummary>,
    pub monte_carlo: Option<Traced<McReport>>,
    pub downgrades: Vec<Downgrade>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub status: &'static str,
    pub config: ExperimentConfig,
    pub environment: EnvironmentDescription,
    pub horizon: f64,
    pub envelope: Traced<EnvelopeConstants>,
    pub r_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub levels: Vec<LevelSummary>,
    pub timings: Vec<Timing>,
}

fn seconds_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Runs the sweep of a validated experiment; writes nothing.
pub fn run_experiment(exp: &Experiment) -> Result<RunReport, ExpError> {
    let cfg = &exp.config;
    let (a, b) = (cfg.lambda.a, cfg.lambda.b);
    let grid = exp.grid();
    let mut timings = Vec::new();

    let start = Instant::now();
    let envelope = envelope_bounds(&exp.env, exp.horizon, a, b, cfg.eta)
        .map_err(|e| ExpError::solver("cumulant", "envelope_bounds", e))?;
    timings.push(Timing {
        stage: "envelope_bounds".into(),
        k: None,
        seconds: seconds_since(start),
    });

    let start = Instant::now();
    let lambdas = grid.lambdas(a, b);
    let limit = limit_grid(&exp.env, exp.horizon, &lambdas, &grid, cfg.tol)
        .map_err(|e| ExpError::solver("cumulant", "solve_path", e))?;
    timings.push(Timing {
        stage: "limit_grid".into(),
        k: None,
        seconds: seconds_since(start),
    });

    let grid_inputs = json!({
        "horizon": exp.horizon, "a": a, "b": b, "grid": grid, "theta": cfg.theta, "tol": cfg.tol,
    });
    let outcomes: Vec<Result<(LevelSummary, Vec<Timing>), ExpError>> = cfg
        .k_list
        .par_iter()
        .map(|&k| {
            let mut timings = Vec::new();
            let start = Instant::now();
            let model = build_discrete_model(&exp.env, k, cfg.theta)
                .map_err(|e| ExpError::solver("discrete", "build_discrete_model", e))?;
            timings.push(Timing {
                stage: "build_discrete_model".into(),
                k: Some(k),
                seconds: seconds_since(start),
            });

            let start = Instant::now();
            let error = level_error(&model, &limit, (envelope.lower, envelope.upper))
                .map_err(|e| ExpError::solver("discrete", "convergence_report", e))?;
            timings.push(Timing {
                stage: "convergence_report".into(),
                k: Some(k),
                seconds: seconds_since(start),
            });

            let start = Instant::now();
            let table = condition_a_residuals(&model, &exp.env, 0.0, exp.horizon, &lambdas)
                .map_err(|e| ExpError::solver("discrete", "condition_a_residuals", e))?;
            let residuals = ResidualSummary {
                k,
                jumps: table.jumps.len(),
                total: table.total,
                cell_total: table.cell_total,
                jump_total: table.jump_total,
                cell_bound: table.cell_bound,
                jump_bound: table.jump_bound,
            };
            timings.push(Timing {
                stage: "condition_a_residuals".into(),
                k: Some(k),
                seconds: seconds_since(start),
            });

            let monte_carlo = match &cfg.monte_carlo {
                Some(mc) => {
                    let start = Instant::now();
                    let report = mc_laplace_check(&model, mc.x0, &mc.times, &mc.lambdas, mc.replicates, mc.seed)
                        .and_then(|r| r.with_limit(&exp.env, cfg.tol))
                        .map_err(|e| ExpError::solver("simulate", "mc_laplace_check", e))?;
                    timings.push(Timing {
                        stage: "mc_laplace_check".into(),
                        k: Some(k),
                        seconds: seconds_since(start),
                    });
                    Some(traced(
                        "simulate",
                        "mc_laplace_check",
                        json!({ "k": k, "theta": cfg.theta, "monte_carlo": mc }),
                        report,
                    ))
                }
                None => None,
            };
            let mut inputs = grid_inputs.clone();
            inputs["k"] = json!(k);
            let summary = LevelSummary {
                k,
                error: traced("discrete", "convergence_report", inputs.clone(), error),
                residuals: traced(
                    "discrete",
                    "condition_a_residuals",
                    json!({ "k": k, "r": 0.0, "t": exp.horizon, "lambdas": lambdas, "theta": cfg.theta }),
                    residuals,
                ),
                monte_carlo,
                downgrades: model.downgrades().to_vec(),
            };
            Ok((summary, timings))
        })
        .collect();

    let mut levels = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let (level, level_timings) = outcome?;
        levels.push(level);
        timings.extend(level_timings);
    }
    Ok(RunReport {
        status: "ok",
        config: cfg.clone(),
        environment: exp.env.describe(),
        horizon: exp.horizon,
        envelope: traced(
            "cumulant",
            "envelope_bounds",
            json!({ "horizon": exp.horizon, "a": a, "b": b, "eta": cfg.eta }),
            envelope,
        ),
        r_grid: limit.r_grid,
        t_grid: limit.t_grid,
        lambdas,
        levels,
        timings,
    })
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn output_error(path: &Path, err: impl std::fmt::Display) -> ExpError {
    ExpError::Output {
        path: path.display().to_string(),
        message: err.to_string(),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), ExpError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| output_error(path, e))?;
    writer.write_record(header).map_err(|e| output_error(path, e))?;
    for row in rows {
        writer.write_record(&row).map_err(|e| output_error(path, e))?;
    }
    writer.flush().map_err(|e| output_error(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), ExpError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| output_error(path, e))?;
    fs::write(path, text + "\n").map_err(|e| output_error(path, e))
}

/// Writes `report.json`, `errors.csv` and, with Monte Carlo settings, `mc.csv`.
pub fn write_outputs(report: &RunReport, out_dir: &Path) -> Result<(), ExpError> {
    fs::create_dir_all(out_dir).map_err(|e| output_error(out_dir, e))?;
    write_json(&out_dir.join("report.json"), report)?;
    let rows = report
        .levels
        .iter()
        .map(|l| {
            vec![
                l.k.to_string(),
                float(l.error.result.sup_error),
                l.error.result.corridor_violations.to_string(),
                float(l.residuals.result.total),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("errors.csv"),
        &["k", "sup_error", "corridor_violations", "residual_sum"],
        rows,
    )?;
    if report.config.monte_carlo.is_some() {
        let mut rows = Vec::new();
        for level in &report.levels {
            let Some(mc) = &level.monte_carlo else { continue };
            for cell in &mc.result.cells {
                rows.push(vec![
                    level.k.to_string(),
                    float(cell.t),
                    float(cell.lambda),
                    float(cell.estimate),
                    float(cell.stderr),
                    float(cell.exact_vk),
                    float(cell.z),
                    cell.limit_v.map(float).unwrap_or_default(),
                ]);
            }
        }
        write_csv(
            &out_dir.join("mc.csv"),
            &["k", "t", "lambda", "estimate", "stderr", "exact_vk", "z", "limit_v"],
            rows,
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FailureReport<'a> {
    status: &'static str,
    exit_code: i32,
    message: String,
    module: Option<&'static str>,
    operation: Option<&'static str>,
    violations: &'a [Violation],
}

fn write_failure(out_dir: &Path, err: &ExpError) {
    let (module, operation, violations): (_, _, &[Violation]) = match err {
        ExpError::Validation { violations, .. } if !violations.is_empty() => {
            (Some("environment"), Some("validate_admissible"), violations)
        }
        ExpError::Validation { .. } => (Some("expcli"), Some("validate"), &[]),
        ExpError::Solver { module, operation, .. } => (Some(*module), Some(*operation), &[]),
        ExpError::Output { .. } => return,
    };
    let report = FailureReport {
        status: if err.exit_code() == 2 { "invalid" } else { "failed" },
        exit_code: err.exit_code(),
        message: err.to_string(),
        module,
        operation,
        violations,
    };
    if fs::create_dir_all(out_dir).is_ok() {
        // the error itself is what gets reported to the caller
        let _ = write_json(&out_dir.join("report.json"), &report);
    }
}

/// Loads, validates and runs a config file, writing reports to the output
/// directory. With `validate_only` nothing runs and nothing is written on success.
///
/// Failures still leave a `report.json` naming the failed operation when an
/// output directory is known.
pub fn run_config_file(path: &Path, overrides: &Overrides, validate_only: bool) -> Result<Option<PathBuf>, ExpError> {
    let fallback_dir = overrides
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from));
    let config = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            if let Some(dir) = &fallback_dir {
                write_failure(dir, &e);
            }
            return Err(e);
        }
    };
    let config_dir = config.out_dir.clone();
    let exp = match config.validate(overrides) {
        Ok(exp) => exp,
        Err(e) => {
            if let Some(dir) = fallback_dir.or(config_dir) {
                write_failure(&dir, &e);
            }
            return Err(e);
        }
    };
    if validate_only {
        return Ok(None);
    }
    match run_experiment(&exp) {
        Ok(report) => {
            write_outputs(&report, &exp.out_dir)?;
            Ok(Some(exp.out_dir))
        }
        Err(e) => {
            write_failure(&exp.out_dir, &e);
            Err(e)
        }
    }
}
