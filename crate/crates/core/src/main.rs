use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use cbve::expcli::{list_builtin_scenarios, run_config_file, ExpError, Overrides};

#[derive(Parser)]
#[command(name = "cbve", version, about = "Branching processes in varying environments: convergence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory; overrides the config and the CBVE_OUT_DIR variable.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Monte Carlo seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Cumulant solver tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Check a config file without running it.
    Validate { config: PathBuf },
    /// List the built-in scenarios.
    Scenarios,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<ExpError>().map_or(1, ExpError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot size the worker pool")?;
    }
    let overrides = Overrides {
        out_dir: cli.out,
        seed: cli.seed,
        tol: cli.tol,
    };
    match cli.command {
        Command::Scenarios => {
            for name in list_builtin_scenarios() {
                println!("{name}");
            }
        }
        Command::Validate { config } => {
            run_config_file(&config, &overrides, true)?;
            println!("{}: ok", config.display());
        }
        Command::Run { config } => {
            if let Some(dir) = run_config_file(&config, &overrides, false)? {
                println!("reports written to {}", dir.display());
            }
        }
    }
    Ok(())
}
