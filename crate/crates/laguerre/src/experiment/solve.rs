use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{random_masses, ExperimentConfig, TargetConfig};
use super::{to_json, trial_rng, write_file, ReportHeader, RunStatus};
use crate::dual_solver::{damped_newton, SolveTrace};
use crate::error::{Error, Result};
use crate::gridded_measure::{g_map, rasterize_cells, Instance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub header: ReportHeader,
    pub sites: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub converged: bool,
    /// Canonical dual vector (zero mean); the last iterate when not converged.
    pub psi: Vec<f64>,
    /// `G(psi)`.
    pub masses: Vec<f64>,
    /// Masses of the rasterized cells.
    pub cell_masses: Vec<f64>,
    pub residual: f64,
    pub trace: SolveTrace,
}

impl SolveReport {
    pub fn status(&self) -> RunStatus {
        if self.converged {
            RunStatus::Ok
        } else {
            RunStatus::SolverFailure
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(dir, "solve.json", &to_json(self))?;
        write_file(dir, "trace.csv", &self.trace.to_csv())
    }
}

/// Solves `G(psi) = lambda` for the configured target.
pub fn run_solve(cfg: &ExperimentConfig) -> Result<SolveReport> {
    let p = cfg.require_problem()?;
    let target_cfg = cfg.target.as_ref().ok_or_else(|| Error::Config("missing [target] section".into()))?;
    let model = p.cost()?;
    let mu = p.measure()?;
    let mut rng = trial_rng(cfg.seed, 0);
    let sites = p.sites(&mut rng, None)?;
    let inst = Instance::new(&model, &sites, &mu)?;
    let n = sites.len();
    let target = match target_cfg {
        TargetConfig::Uniform => vec![1.0 / n as f64; n],
        TargetConfig::Explicit { lambda } => lambda.clone(),
        TargetConfig::FromDual { psi } => g_map(inst, psi)?,
        TargetConfig::Random => random_masses(n, &mut rng),
    };
    let (converged, psi, trace) = match damped_newton(inst, &target, None, &cfg.solver.newton()) {
        Ok(sol) => (true, sol.psi.values, sol.trace),
        Err(Error::NotConverged { trace, .. }) => {
            let psi = trace.iterations.last().map(|r| r.psi.clone()).unwrap_or_default();
            (false, psi, *trace)
        }
        Err(e) => return Err(e),
    };
    let masses = g_map(inst, &psi)?;
    let residual = masses.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum();
    let cell_masses = rasterize_cells(inst, &psi)?.masses;
    Ok(SolveReport {
        header: ReportHeader::new("solve", cfg),
        sites: sites.to_vecs(),
        target,
        converged,
        psi,
        masses,
        cell_masses,
        residual,
        trace,
    })
}
