mod artifacts;
mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use clbf_core::{ConfigError, Error};

use run_config::{Overrides, RunConfig};

/// Safe stabilizing feedback from a barrier-weighted Zubov value function.
#[derive(Debug, Parser)]
#[command(name = "clbf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the value field and write field.csv and stats.json.
    Solve(Overrides),
    /// Check a solved field and write certify.json.
    Certify {
        #[command(flatten)]
        ov: Overrides,
        /// Field to check (default: <out>/field.csv).
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Simulate one trajectory and write trajectory.csv and trajectory.json.
    Simulate {
        #[command(flatten)]
        ov: Overrides,
        /// Hold this input instead of the greedy feedback.
        #[arg(long, allow_hyphen_values = true)]
        constant_u: Option<String>,
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Closed-loop simulations from the sublevel set; writes safety_report.json.
    BatchVerify {
        #[command(flatten)]
        ov: Overrides,
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Re-solve under refinement of one parameter; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        ov: Overrides,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Refinement factors, comma separated.
        #[arg(long, default_value = "1,2")]
        factors: String,
    },
    /// Print the effective configuration.
    ShowConfig(Overrides),
    /// List the catalog systems.
    BenchList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Grid,
    Controls,
    Dt,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    NotConverged(String),
    Check(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Check(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::NotConverged(m) | CliError::Check(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NotConverged => CliError::NotConverged(e.to_string()),
            Error::Io(_) | Error::Query(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(ov) => commands::solve(&RunConfig::load(&ov)?),
        Command::Certify { ov, field } => commands::certify(&RunConfig::load(&ov)?, field),
        Command::Simulate { ov, constant_u, field } => {
            commands::simulate(&RunConfig::load(&ov)?, constant_u.as_deref(), field)
        }
        Command::BatchVerify { ov, field } => commands::batch_verify(&RunConfig::load(&ov)?, field),
        Command::Sweep { ov, axis, factors } => commands::sweep(&RunConfig::load(&ov)?, axis, &factors),
        Command::ShowConfig(ov) => {
            print!("{}", RunConfig::load(&ov)?.to_text());
            Ok(())
        }
        Command::BenchList => {
            commands::bench_list();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
