//! `laguerre`: run semi-discrete transport experiments from a TOML configuration.
//!
//! Exit codes: 0 success, 2 a bound was violated beyond tolerance, 3 a solver
//! failed, 4 the configuration or command line was invalid.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use laguerre::experiment::{
    run_perturb_sweep, run_solve, run_spectral, run_storage_demo, template, to_json, with_threads, CommandKind, ExperimentConfig, RunStatus,
};
use laguerre::Error;

#[derive(Parser)]
#[command(name = "laguerre", version, about = "Semi-discrete optimal transport experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; reports go to stdout when absent
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the configured pixels per unit length
    #[arg(long, global = true)]
    resolution: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve G(psi) = lambda for the configured target
    Solve,
    /// Perturb target masses and measure how cells and potentials move
    PerturbSweep,
    /// Run the one-dimensional storage-fee sharpness example
    StorageDemo,
    /// Spectrum of -DG and its lower bounds
    Spectral,
    /// Print or write a starting configuration
    GenConfig {
        /// solve, perturb-sweep, storage-demo or spectral
        #[arg(long, default_value = "perturb-sweep")]
        kind: CommandKind,
    },
}

const EXIT_VIOLATION: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_CONFIG: u8 = 4;

fn exit_for_error(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    }
}

fn exit_for_status(s: RunStatus) -> u8 {
    match s {
        RunStatus::Ok => 0,
        RunStatus::BoundViolation => EXIT_VIOLATION,
        RunStatus::SolverFailure => EXIT_SOLVER,
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let path = cli.config.as_deref().ok_or_else(|| Error::Config("--config is required".into()))?;
    ExperimentConfig::load(path)?.with_overrides(cli.seed, cli.resolution)
}

/// Writes the report into `out`, or prints its JSON.
fn emit<T: serde::Serialize>(report: &T, out: Option<&Path>, write: impl FnOnce(&Path) -> laguerre::Result<()>) -> Result<(), Error> {
    match out {
        Some(dir) => write(dir),
        None => {
            print!("{}", to_json(report));
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<RunStatus, Error> {
    let out = cli.out.as_deref();
    if let Command::GenConfig { kind } = &cli.command {
        let text = template(*kind);
        match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join(format!("{kind}.toml")), text)?;
            }
            None => print!("{text}"),
        }
        return Ok(RunStatus::Ok);
    }
    let cfg = load(cli)?;
    let start = Instant::now();
    let status = with_threads(cli.threads, || -> Result<RunStatus, Error> {
        Ok(match &cli.command {
            Command::Solve => {
                let r = run_solve(&cfg)?;
                emit(&r, out, |d| r.write(d))?;
                r.status()
            }
            Command::PerturbSweep => {
                let r = run_perturb_sweep(&cfg)?;
                emit(&r, out, |d| r.write(d))?;
                r.status()
            }
            Command::StorageDemo => {
                let r = run_storage_demo(&cfg)?;
                emit(&r, out, |d| r.write(d))?;
                r.status()
            }
            Command::Spectral => {
                let r = run_spectral(&cfg)?;
                emit(&r, out, |d| r.write(d))?;
                r.status()
            }
            Command::GenConfig { .. } => unreachable!(),
        })
    })??;
    let seconds = start.elapsed().as_secs_f64();
    match out {
        Some(dir) => std::fs::write(dir.join("timing.json"), format!("{{\n  \"runtime_seconds\": {seconds}\n}}\n"))?,
        None => eprintln!("runtime {seconds:.3} s"),
    }
    Ok(status)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(status) => ExitCode::from(exit_for_status(status)),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for_error(&e))
        }
    }
}
