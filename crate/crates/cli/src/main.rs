//! `evoskip` command-line driver.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evoskip::OrderingStrategy;

use config::{FileConfig, Mode};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_FLAGGED: u8 = 4;

/// Invalid input or configuration (exit status 2).
#[derive(Debug)]
pub struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Invalid(msg.into()))
}

#[derive(Parser)]
#[command(name = "evoskip", version, about = "Tiled sparse attention with evolving skip masks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trajectory and write it as a LATN file.
    Generate,
    /// Run the tiled engine over a trajectory and write report artifacts.
    Run,
    /// Search a per-timestep threshold schedule.
    Calibrate,
    /// Run one of the harness experiments.
    Experiment {
        #[arg(value_enum)]
        name: Experiment,
    },
    /// Summarise JSON artifacts (defaults to every JSON file in --out).
    Report { paths: Vec<PathBuf> },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Experiment {
    Persistence,
    Perturbation,
    LengthSweep,
    Tradeoff,
    BoundCheck,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::Persistence => "persistence",
            Experiment::Perturbation => "perturbation",
            Experiment::LengthSweep => "length-sweep",
            Experiment::Tradeoff => "tradeoff",
            Experiment::BoundCheck => "bound-check",
        }
    }
}

#[derive(Args, Default)]
struct Overrides {
    /// Flat TOML file of configuration keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[arg(long, global = true)]
    ordering: Option<OrderingStrategy>,
    /// Signed skip threshold (<= 0); the engine uses epsilon = -threshold.
    #[arg(long, global = true, allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// Threshold schedule JSON written by `calibrate`.
    #[arg(long, global = true)]
    schedule: Option<PathBuf>,
    /// Comma-separated epsilon values for calibration and the tradeoff table.
    #[arg(long, global = true, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, global = true)]
    xi: Option<f64>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// LATN trajectory to read instead of generating one.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

impl Overrides {
    fn into_file_config(self) -> FileConfig {
        FileConfig {
            seed: self.seed,
            mode: self.mode,
            ordering: self.ordering,
            threshold: self.threshold,
            schedule: self.schedule,
            grid: self.grid,
            xi: self.xi,
            tau: self.tau,
            out: self.out,
            workers: self.workers,
            reps: self.reps,
            input: self.input,
            ..FileConfig::default()
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<evoskip::Error>() {
            return if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME };
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        let file = match &cli.overrides.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let cfg = config::Config::resolve(cli.overrides.into_file_config().or(file))?;
        commands::dispatch(&cli.command, &cfg)
    })();
    match result {
        Ok(commands::Status::Done) => ExitCode::SUCCESS,
        Ok(commands::Status::Flagged) => ExitCode::from(EXIT_FLAGGED),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
