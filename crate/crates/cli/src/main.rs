//! Command-line pipeline for interaction-kernel learning experiments.
//!
//! Exit codes: 0 success, 2 input error, 3 optimization failure,
//! 4 consistency failure.

use clap::{Args, Parser, Subcommand};
use interaction_gp_cli::commands;
use interaction_gp_cli::config::{preset_config, ExperimentConfig};
use interaction_gp::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "igp", about = "Learn interaction kernels of particle systems with GP regression")]
struct Cli {
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to an experiment configuration JSON file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a built-in experiment preset.
    #[arg(long)]
    preset: Option<String>,
    /// Override the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut config = match (&self.config, &self.preset) {
            (Some(path), None) => {
                ExperimentConfig::from_json_str(&std::fs::read_to_string(path)?)?
            }
            (None, Some(name)) => preset_config(name)?,
            (None, None) => {
                return Err(Error::InvalidInput(
                    "give either --config or --preset".into(),
                ))
            }
            (Some(_), Some(_)) => unreachable!("clap forbids this"),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic observation set.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model to an observation set.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Observation file (JSON or CSV) from `simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained model: kernel curve, error metrics, predictions.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Checks of the supporting theory.
    Theory {
        #[command(subcommand)]
        check: TheoryCommand,
    },
    /// One-shot reproduction: simulate, train, and evaluate.
    Reproduce {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum TheoryCommand {
    /// Posterior mean vs. kernel ridge regression on a seeded instance.
    GpKrr {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo coercivity ratios for the configured system.
    Coercivity {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 5000)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Kernel ridge regression error as the trajectory count grows.
    Convergence {
        #[arg(long, value_delimiter = ',', default_values_t = [4usize, 16, 64])]
        m_list: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate { config, out } => commands::cmd_simulate(&config.resolve()?, out),
        Command::Train { config, data, out } => {
            commands::cmd_train(&config.resolve()?, data, out)
        }
        Command::Evaluate { config, data, model, out } => {
            commands::cmd_evaluate(&config.resolve()?, data, model, out)
        }
        Command::Theory { check } => match check {
            TheoryCommand::GpKrr { seed, out } => {
                let pass = commands::cmd_theory_gp_krr(*seed, out.as_deref())?;
                if !pass {
                    return Err(Error::Numeric("gp-krr equivalence check failed".into()));
                }
                Ok(())
            }
            TheoryCommand::Coercivity { config, samples, out } => {
                commands::cmd_theory_coercivity(&config.resolve()?, *samples, out)
            }
            TheoryCommand::Convergence { m_list, seeds, out } => {
                commands::cmd_theory_convergence(m_list, seeds, out)
            }
        },
        Command::Reproduce { config, out } => commands::cmd_reproduce(&config.resolve()?, out),
    }
}

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::InvalidInput(_) | Error::Parse(_) | Error::Ingestion { .. } | Error::Io(_) => 2,
        Error::Optimization(_) => 3,
        Error::Contract(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code_for(&error))
        }
    }
}
