//! `mpidefocus`: defocus map and all-in-focus estimation from dual-pixel
//! pairs.

mod cmd;
mod files;
mod manifest;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

pub const THREADS_ENV: &str = "MPIDEFOCUS_THREADS";

#[derive(Parser, Debug)]
#[command(name = "mpidefocus", version, about = "Dual-pixel defocus and all-in-focus estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recover left/right kernel grids from disc-target captures.
    Calibrate(cmd::calibrate::Args),
    /// Write a synthetic dual-pixel scene or calibration capture.
    Synth(cmd::synth::Args),
    /// Estimate the all-in-focus image and defocus map of a pair.
    Deblur(cmd::deblur::Args),
    /// Tabulate energy minimizers with and without bias correction.
    SweepBias(cmd::sweep::Args),
    /// Score predictions against ground truth.
    Eval(cmd::eval::Args),
}

/// Thread cap from the environment, if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?;
            Ok(Some(n.max(1)))
        }
        Err(_) => Ok(None),
    }
}

fn init_threads() -> Result<()> {
    if let Some(n) = thread_cap()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    log::debug!("using {} threads", rayon::current_num_threads());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Calibrate(a) => cmd::calibrate::run(a),
        Command::Synth(a) => cmd::synth::run(a),
        Command::Deblur(a) => cmd::deblur::run(a),
        Command::SweepBias(a) => cmd::sweep::run(a),
        Command::Eval(a) => cmd::eval::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
