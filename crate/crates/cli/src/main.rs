// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ddsim_cli::config::FileConfig;
use ddsim_cli::error::EXIT_NUMERICAL;
use ddsim_cli::{aht_verify, fit_csv, rerun, scan, simulate, AhtArgs, CliError, Outcome};
use ddsim_core::fitting::FitModel;

/// Dynamical decoupling simulator for a single spin with imperfect pulses.
#[derive(Parser)]
#[command(name = "ddsim", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides `output.dir` in the config.
    #[arg(long, global = true, env = "DDSIM_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one (sequence, tau) ensemble and write its echo series.
    Simulate { config: PathBuf },
    /// Fit decay times over a grid of sequences and delays.
    Scan { config: PathBuf },
    /// Compare average Hamiltonians with their closed forms.
    AhtVerify {
        /// Flip-angle error used for the comparison.
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
        #[arg(long, default_value_t = 100.0)]
        tau_us: f64,
        /// Exit with status 3 when any row is outside its tolerance.
        #[arg(long)]
        strict: bool,
    },
    /// Fit an echo CSV (time_s, amplitude[, stderr]).
    Fit {
        csv: PathBuf,
        #[arg(long, default_value = "double")]
        model: FitModel,
    },
    /// Re-run a manifest and check the outputs are bit-identical.
    Rerun { manifest: PathBuf },
}

fn run(cli: Cli) -> Result<(Outcome, bool), CliError> {
    let out = cli.out_dir.as_deref();
    let load = |p: &Path| FileConfig::load(p).map_err(CliError::from);
    Ok(match cli.command {
        Command::Simulate { config } => (simulate(&load(&config)?, out)?, false),
        Command::Scan { config } => (scan(&load(&config)?, out)?, false),
        Command::AhtVerify { eps, tau_us, strict } => (aht_verify(AhtArgs { eps, tau_us }, out)?, strict),
        Command::Fit { csv, model } => (fit_csv(&csv, model)?, false),
        Command::Rerun { manifest } => (rerun(&manifest, out)?, false),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("ddsim: cannot set up {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok((outcome, strict)) => {
            print!("{}", outcome.summary);
            if let Some((path, _)) = &outcome.manifest {
                println!("manifest {}", path.display());
            }
            if strict && outcome.failed_checks > 0 {
                return ExitCode::from(EXIT_NUMERICAL as u8);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ddsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
