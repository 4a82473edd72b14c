//! `muloco`: run, analyze, fit and cost commands for the MuLoCo/DiLoCo
//! laboratory.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

mod analyze;
mod config;
mod cost;
mod dump;
mod fit;
mod manifest;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use muloco::scaling_fit::FitForm;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Runtime(format!("{}: {e}", path.display()))
    }

    fn config_io(path: &Path, e: std::io::Error) -> Self {
        Self::Config(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "muloco", version, about = "Local-update training simulator and report generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every run of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads per run; 0 uses all cores.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Replace the config's seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Alignment, spectra, audit and step-norm reports from run dumps.
    Analyze {
        /// Run directories written by `muloco run`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Run whose pseudogradients serve as the alignment reference.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit loss-vs-compute power laws to a table of finished runs.
    Fit {
        /// CSV with columns method,K,N_params,tokens,batch_tokens,loss.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = FormArg::PerMethodOffset)]
        form: FormArg,
        #[arg(long, default_value_t = 512)]
        restarts: usize,
        #[arg(long)]
        out: PathBuf,
        /// Threads for the restart search; 0 uses all cores.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Seed of the random restarts.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Series (`method/K<k>`) to compare every other series against.
        #[arg(long, requires_all = ["bcrit_a", "bcrit_alpha"])]
        efficiency_baseline: Option<String>,
        /// Critical batch law `B_crit = a D^alpha` used for the efficiency curves.
        #[arg(long)]
        bcrit_a: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        bcrit_alpha: Option<f64>,
    },
    /// Wall-clock and utilization curves from a cost config.
    Cost {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Plain,
    PerMethodOffset,
    JointIrr,
}

impl From<FormArg> for FitForm {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Plain => FitForm::Plain,
            FormArg::PerMethodOffset => FitForm::PerMethodOffset,
            FormArg::JointIrr => FitForm::JointIrr,
        }
    }
}

fn with_threads<T>(threads: usize, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
            seed_override,
        } => run::cmd_run(&config, &out, threads, seed_override),
        Command::Analyze { runs, reference, out } => analyze::cmd_analyze(&runs, reference.as_deref(), &out),
        Command::Fit {
            data,
            form,
            restarts,
            out,
            threads,
            seed_override,
            efficiency_baseline,
            bcrit_a,
            bcrit_alpha,
        } => {
            if restarts == 0 {
                return Err(CliError::Config("--restarts: must be at least 1".into()));
            }
            let efficiency = efficiency_baseline.map(|baseline| fit::Efficiency {
                baseline,
                bcrit_a: bcrit_a.unwrap_or_default(),
                bcrit_alpha: bcrit_alpha.unwrap_or_default(),
            });
            let args = fit::FitArgs {
                data: &data,
                form: form.into(),
                restarts,
                seed: seed_override.unwrap_or(0),
                efficiency,
            };
            with_threads(threads, || fit::cmd_fit(&args, &out))
        }
        Command::Cost { config, out } => cost::cmd_cost(&config, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("muloco: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
