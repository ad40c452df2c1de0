//! `sensorsel`: batch driver for calibration, interferent selection,
//! sensitivity analysis and inversion.
//!
//! Exit codes: 0 on success, 2 for invalid input or configuration, 3 when a
//! computation breaks down numerically.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::Run;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "sensorsel", version, about = "Variable selection and Bayesian inversion for low-cost sensor calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true, env = "CALIB_CONFIG")]
    config: Option<PathBuf>,
    /// Input data: a CSV for most commands, JSON results for `report`.
    #[arg(long, global = true, env = "CALIB_DATA", value_delimiter = ',')]
    data: Vec<PathBuf>,
    /// Model artifact written by `select`.
    #[arg(long, global = true, env = "CALIB_MODEL")]
    model: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "CALIB_OUT", default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true, env = "CALIB_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "CALIB_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw synthetic train and test sets (clean and noisy).
    Simulate,
    /// Select interferents, calibrate the chosen models, write the artifact.
    Select,
    /// Proportional marginal effects of each model input.
    Pme,
    /// Estimate targets from sensor readings with a model artifact.
    Invert,
    /// Level-k resolution curves of every model input.
    Resolution,
    /// Render SVG figures from selection or PME JSON files.
    Report,
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let c = &cli.common;
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(sensorsel_core::Error::InvalidConfig("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut config = RunConfig::load(c.config.as_deref(), std::env::vars())?;
    if let Some(s) = c.seed {
        config.seed = s;
    }
    let run = Run::new(config, c.out.clone())?;
    let data = c.data.first().cloned();
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&run),
        Command::Select => commands::cmd_select(&run, &data),
        Command::Pme => commands::cmd_pme(&run, &c.model, &data),
        Command::Invert => commands::cmd_invert(&run, &c.model, &data),
        Command::Resolution => commands::cmd_resolution(&run, &c.model, &data),
        Command::Report => commands::cmd_report(&run, &c.data),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<sensorsel_core::Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
