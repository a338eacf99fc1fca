//! `gravos` — dataset generation, pipeline runs, ablation sweeps, and
//! selection statistics from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "gravos", version, about = "Gradient-based voxel selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory (train/ and eval/ splits).
    Synth {
        /// Experiment config (TOML). The dataset section must be synthetic.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed (also: GRAVOS_SEED).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full pipeline and write a report directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one pipeline per value of a swept parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// One of: nu_vs, nu_idr, early_epoch, mechanisms.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; mechanism pairs as `early/late`
        /// (`mean`, `median`, `topk`, `topk:<ratio>`), or `grid` for the
        /// built-in mechanism grid.
        #[arg(long)]
        values: String,
    },
    /// Recompute the class-balance table from exported selection and label
    /// CSV directories.
    Stats {
        /// Directory of per-scene selection CSVs.
        #[arg(long)]
        selection: PathBuf,
        /// Directory of per-scene voxel-label CSVs.
        #[arg(long)]
        labels: PathBuf,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    // Usage and configuration problems exit 2; runtime failures exit 1.
    if let Some(e) = err.downcast_ref::<gravos_core::Error>() {
        match e {
            gravos_core::Error::Config(_)
            | gravos_core::Error::Parse { .. }
            | gravos_core::Error::MalformedFile { .. } => 2,
            _ => 1,
        }
    } else if err.downcast_ref::<toml::de::Error>().is_some() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, out, seed } => commands::synth(&config, &out, seed),
        Command::Run { config, out, seed } => commands::run(&config, &out, seed),
        Command::Sweep {
            config,
            out,
            seed,
            axis,
            values,
        } => commands::sweep(&config, &out, seed, &axis, &values),
        Command::Stats {
            selection,
            labels,
            out,
        } => commands::stats(&selection, &labels, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
