//! `tclswarm` command-line driver: configuration files, CSV formats, run
//! manifests and the experiment subcommands built on `tclswarm-core`.

pub mod commands;
pub mod config;
mod error;
pub mod formats;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "tclswarm", version, about = "Desynchronize thermostatically controlled loads")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Primary output file; a `.manifest.json` is written next to it
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed, overriding the configuration
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads [env: TCLSWARM_THREADS]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overwrite existing outputs
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the regime schedule and write the aggregate-power time series
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep phase offsets over [0, 2π/N] and write the delay table
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Number of offsets, overriding [sweep] grid
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Track a piecewise-constant P_norm schedule with the delay table
    LoadFollow {
        #[command(flatten)]
        common: Common,
        /// CSV with columns start_s,target_p_norm_pct
        #[arg(long)]
        schedule: PathBuf,
    },
    /// Generate the (n, p_norm, alpha) training dataset
    Dataset {
        #[command(flatten)]
        common: Common,
        /// Every fifth N only
        #[arg(long)]
        fast: bool,
    },
    /// Fit the offset regressor and report test metrics
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV produced by `dataset`
        #[arg(long)]
        data: PathBuf,
    },
    /// Predict the phase offset for a population size and target P_norm
    Predict {
        #[command(flatten)]
        common: Common,
        /// Model file produced by `train`
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "n")]
        n: usize,
        /// Target P_norm, percent
        #[arg(long)]
        pnorm: f64,
    },
    /// Score a time series: mean, ripple, fluctuation band, dominant frequency, tracking error
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Time-series CSV
        #[arg(long)]
        input: PathBuf,
        /// Window start, seconds
        #[arg(long)]
        from_s: Option<f64>,
        /// Window end, seconds
        #[arg(long)]
        to_s: Option<f64>,
        /// Reference time series; defaults to the window mean
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Normalizer of the tracking error, kW
        #[arg(long)]
        p_base_kw: Option<f64>,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Simulate { common }
            | Command::Sweep { common, .. }
            | Command::LoadFollow { common, .. }
            | Command::Dataset { common, .. }
            | Command::Train { common, .. }
            | Command::Predict { common, .. }
            | Command::Metrics { common, .. } => common,
        }
    }
}

/// `--threads`, else `TCLSWARM_THREADS`, else rayon's default.
pub fn thread_count(flag: Option<usize>, env: Option<OsString>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return match n {
            0 => Err(CliError::Config("--threads must be at least 1".into())),
            n => Ok(Some(n)),
        };
    }
    match env {
        None => Ok(None),
        Some(v) => match v.to_str().and_then(|s| s.trim().parse::<usize>().ok()) {
            Some(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("TCLSWARM_THREADS={v:?} is not a positive integer"))),
        },
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    let common = command.common();
    if let Some(n) = thread_count(common.threads, std::env::var_os("TCLSWARM_THREADS"))? {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match command {
        Command::Simulate { common } => commands::simulate(common),
        Command::Sweep { common, grid } => commands::sweep(common, *grid),
        Command::LoadFollow { common, schedule } => commands::load_follow(common, schedule),
        Command::Dataset { common, fast } => commands::dataset(common, *fast),
        Command::Train { common, data } => commands::train(common, data),
        Command::Predict { common, model, n, pnorm } => commands::predict(common, model, *n, *pnorm),
        Command::Metrics {
            common,
            input,
            from_s,
            to_s,
            reference,
            p_base_kw,
        } => commands::metrics(common, input, *from_s, *to_s, reference.as_deref(), *p_base_kw),
    }
}
