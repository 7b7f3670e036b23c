//! `cmlfactor` command-line driver.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration or input,
//! 3 output cannot be written.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "cmlfactor",
    version,
    about = "Coupled chaotic-map return universes and factor detection"
)]
pub struct Cli {
    /// Base seed; overrides the seeds in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for ensemble commands (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one return panel.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Also write the Laplacian, rotation and coupling matrices.
        #[arg(long)]
        export_matrices: bool,
    },
    /// Detect factors in a panel CSV.
    Analyze {
        #[arg(long)]
        panel: PathBuf,
        /// `uniform`, `sidecar` (the panel's `.meta.json`), or a metadata JSON path.
        #[arg(long, default_value = "uniform")]
        baseline: String,
        /// Uncoupled realisations averaged into the baseline.
        #[arg(long, default_value_t = 1)]
        n_baseline: usize,
        /// Count only the leading run of ranks above the baseline.
        #[arg(long)]
        leading_run: bool,
    },
    /// Ensemble sweep over cluster counts and couplings. Resumable.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Restrict to `m=<int>` or `eps=<float>`; repeatable.
        #[arg(long = "subset", value_name = "KEY=VALUE")]
        subsets: Vec<String>,
    },
    /// Score uncoupled orbits on a parameter grid against an empirical series.
    Calibrate {
        #[arg(long)]
        empirical: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Keep every k-th gamma value.
        #[arg(long, default_value_t = 1)]
        grid_stride: usize,
    },
    /// Sampling distributions of moment estimators over many orbits.
    Moments {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.source);
            ExitCode::from(e.kind.code())
        }
    }
}
