//! `roma` — mediation analysis for random objects from the command line.
//!
//! Subcommands: `fit` selects hyperparameters and reports GCV traces,
//! `effects` estimates NDE/NIE/TE with confidence intervals and global
//! tests, `simulate` runs benchmark replication campaigns. Exit codes:
//! 0 success, 2 configuration error, 3 data error, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use roma::cli_io::{self, SimulateArgs};
use roma::RomaError;

#[derive(Parser)]
#[command(name = "roma", version, about = "Mediation analysis for random objects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FitArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// CSV dataset; overrides the config's data.path.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output path prefix.
    #[arg(long, default_value = "roma_out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimArgs {
    /// Scenario id, e.g. I.1 or II.4.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Per-unit sample size for observed distributions.
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Kernel mode: linear or nonlinear (defaults per scenario).
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, default_value_t = 100)]
    grid: usize,
    #[arg(long, default_value_t = 0.05)]
    q: f64,
    /// Null-spectrum truncation (defaults to min(n, outcome dim)).
    #[arg(long)]
    truncation: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    x: f64,
    #[arg(long, default_value_t = 0.0)]
    x_star: f64,
    #[arg(long, default_value_t = 200_000)]
    oracle_draws: usize,
    /// Skip per-replicate GCV and use these fixed eps,eps_tilde.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    fixed: Option<Vec<f64>>,
    #[arg(long)]
    bandwidth_x: Option<f64>,
    #[arg(long)]
    bandwidth_m: Option<f64>,
    #[arg(long, default_value = "roma_sim")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Tune hyperparameters and write the fit summary with GCV traces.
    Fit(FitArgs),
    /// Estimate effects with confidence intervals and global tests.
    Effects(FitArgs),
    /// Run a benchmark replication campaign.
    Simulate(SimArgs),
}

fn init_threads() {
    if let Ok(v) = std::env::var("ROMA_THREADS") {
        if let Ok(k) = v.parse::<usize>() {
            if k >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
        }
    }
}

fn load(args: &FitArgs) -> Result<(roma::cli_io::RunConfig, roma::Dataset), RomaError> {
    let cfg = cli_io::load_config(&args.config)?;
    let data_path = match (&args.data, &cfg.data.path) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => {
            return Err(RomaError::Config(
                "no dataset: pass --data or set data.path in the config".into(),
            ))
        }
    };
    let data = cli_io::read_dataset(&data_path, &cfg.data)?;
    Ok((cfg, data))
}

fn run() -> Result<(), RomaError> {
    init_threads();
    let cli = Cli::parse();
    match cli.command {
        Command::Fit(args) => {
            let (cfg, data) = load(&args)?;
            let written = cli_io::cmd_fit(&cfg, &data, &args.out)?;
            for p in written {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Effects(args) => {
            let (cfg, data) = load(&args)?;
            let written = cli_io::cmd_effects(&cfg, &data, &args.out)?;
            for p in written {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Simulate(args) => {
            let fixed = match &args.fixed {
                Some(v) if v.len() == 2 => Some((v[0], v[1])),
                Some(_) => {
                    return Err(RomaError::Config("--fixed needs exactly eps,eps_tilde".into()))
                }
                None => None,
            };
            let sim = SimulateArgs {
                scenario: args.scenario.clone(),
                n: args.n,
                m: args.m,
                reps: args.reps,
                seed: args.seed,
                mode: args.mode.clone(),
                grid_size: args.grid,
                level_q: args.q,
                truncation: args.truncation,
                contrast: (args.x, args.x_star),
                oracle_draws: args.oracle_draws,
                fixed,
                bandwidth_x: args.bandwidth_x,
                bandwidth_m: args.bandwidth_m,
            };
            let report = cli_io::cmd_simulate(&sim, &args.out)?;
            eprintln!(
                "{} ({}, n={}, reps={}): TE MSE {:.4} ({:.4}), coverage NDE {:.3} NIE {:.3}, rejection NDE {:.3} NIE {:.3}",
                report.scenario,
                report.kernel_mode,
                report.n,
                report.reps_completed,
                report.mse_te.mean,
                report.mse_te.se,
                report.coverage_nde,
                report.coverage_nie,
                report.rejection_nde,
                report.rejection_nie
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
