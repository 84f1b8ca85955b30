//! `pmga`: theory, simulation, comparison, audit and region tools for
//! group-private multi-group aggregation.

mod commands;
mod scenario;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{CliError, CliResult, Overrides};
use scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "pmga",
    version,
    about = "Group-private aggregation: Q&A and randomized-group schemes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Privacy level, parameters and closed-form error of each scheme.
    Theory(SchemeArgs),
    /// Monte Carlo trials of the full protocol.
    Simulate {
        #[command(flatten)]
        args: SchemeArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Fixed-budget error curves of both schemes over an epsilon grid.
    Compare {
        scenario: PathBuf,
        #[arg(long)]
        budget: Option<u64>,
        /// Trials per grid point for the empirical columns; 0 for theory only.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the crossover report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Brute-force channel audit against the closed-form privacy levels.
    Audit {
        scenario: PathBuf,
        /// Also audit the parameters calibrated to this level.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid of binary two-group models meeting each privacy level with no value noise.
    Region {
        #[arg(long, required = true, value_delimiter = ',', num_args = 1..)]
        epsilon: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SchemeArgs {
    scenario: PathBuf,
    /// Restrict to one registered scheme (qa, rg).
    #[arg(long)]
    scheme: Option<String>,
    /// Calibrate each scheme to this privacy level instead of using the scenario parameters.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SchemeArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            scheme: self.scheme.clone(),
            epsilon: self.epsilon,
            trials: self.trials,
            seed: self.seed,
            budget: self.budget,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(path) => {
            std::fs::write(path, bytes).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
        }
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Internal(format!("stdout: {e}"))),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Theory(args) => {
            let scenario = Scenario::load(&args.scenario)?;
            emit(args.out.as_deref(), &commands::theory(&scenario, &args.overrides())?)
        }
        Command::Simulate { args, format } => {
            let scenario = Scenario::load(&args.scenario)?;
            let bytes = commands::simulate(&scenario, &args.overrides(), matches!(format, Format::Csv))?;
            emit(args.out.as_deref(), &bytes)
        }
        Command::Compare {
            scenario,
            budget,
            trials,
            seed,
            out,
            report,
        } => {
            let scenario = Scenario::load(&scenario)?;
            let o = Overrides {
                budget,
                trials,
                seed,
                ..Overrides::default()
            };
            let result = commands::compare(&scenario, &o)?;
            emit(out.as_deref(), &result.csv)?;
            if let Some(path) = report {
                emit(Some(&path), &result.report)?;
            }
            eprintln!("{}", result.summary_line);
            Ok(())
        }
        Command::Audit { scenario, epsilon, out } => {
            let scenario = Scenario::load(&scenario)?;
            let o = Overrides {
                epsilon,
                ..Overrides::default()
            };
            let (bytes, pass) = commands::audit(&scenario, &o)?;
            emit(out.as_deref(), &bytes)?;
            if pass {
                Ok(())
            } else {
                Err(CliError::Internal(
                    "audited and closed-form privacy levels disagree".into(),
                ))
            }
        }
        Command::Region {
            epsilon,
            resolution,
            out,
        } => emit(out.as_deref(), &commands::region(&epsilon, resolution)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Internal(_) => ExitCode::from(3),
            }
        }
    }
}
