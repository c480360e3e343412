//! Experiment orchestration behind the command-line tool.
//!
//! Every command reads an [`ExperimentConfig`], runs deterministically from its
//! seed and returns a serializable report. Random draws for trial `k` come from
//! ChaCha8 seeded with `seed` (via `seed_from_u64`) on stream `k`, so a trial's
//! inputs do not depend on how many trials run or on the thread count. Reports
//! never contain timings; callers record those separately.

pub mod config;
mod solve;
mod spectral;
mod storage_demo;
mod sweep;
mod templates;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::{ExperimentConfig, SCHEMA_VERSION};
pub use solve::{run_solve, SolveReport};
pub use spectral::{run_spectral, SpectralRunReport, SpectralTrial};
pub use storage_demo::{run_storage_demo, sharpness_instance, Check, StorageDemoReport};
pub use sweep::{log_log_slope, run_perturb_sweep, SweepReport, SweepRow, SweepSummary, SweepTrial, SWEEP_COLUMNS};
pub use templates::{template, CommandKind};

/// Generator for trial `stream` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `f` on a dedicated pool of `threads` workers, or the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::Config("thread count must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Fields shared by every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

impl ReportHeader {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self { schema_version: SCHEMA_VERSION, command: command.into(), config_hash: cfg.hash(), seed: cfg.seed }
    }
}

/// How a run ended, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    SolverFailure,
    BoundViolation,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}
