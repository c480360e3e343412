use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{random_masses, ExperimentConfig, TargetConfig};
use super::sweep::spectral_report;
use super::{to_json, trial_rng, write_file, ReportHeader, RunStatus};
use crate::cost_geometry::universal_constants;
use crate::dual_solver::damped_newton;
use crate::error::Result;
use crate::gridded_measure::{g_map, Instance};
use crate::spectral_analysis::SpectralReport;
use crate::stability_metrics::PwParameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralTrial {
    pub trial: usize,
    pub sites: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub psi: Vec<f64>,
    pub error: Option<String>,
    pub report: Option<SpectralReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralRunReport {
    pub header: ReportHeader,
    pub trials: Vec<SpectralTrial>,
    pub connected: usize,
    pub diameter_bound_failures: usize,
    pub kernel_failures: usize,
    /// Trials where the full lower bound held for the configured `C_PW` (reported only).
    pub lower_bound_held: usize,
    pub failed_trials: usize,
}

impl SpectralRunReport {
    pub fn status(&self) -> RunStatus {
        if self.diameter_bound_failures > 0 || self.kernel_failures > 0 {
            RunStatus::BoundViolation
        } else if self.failed_trials > 0 {
            RunStatus::SolverFailure
        } else {
            RunStatus::Ok
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(dir, "spectral.json", &to_json(self))
    }
}

/// Spectrum of `-DG` at the solution for the configured (or random) target,
/// once per sweep trial or once if no sweep is configured.
pub fn run_spectral(cfg: &ExperimentConfig) -> Result<SpectralRunReport> {
    let p = cfg.require_problem()?;
    let model = p.cost()?;
    let mu = p.measure()?;
    let pw = PwParameters { q: cfg.stability.q, c_pw: cfg.stability.c_pw.unwrap_or(mu.diameter() / 2.0) };
    let n_trials = cfg.sweep.as_ref().map_or(1, |s| s.trials);
    let counts = cfg.sweep.as_ref().and_then(|s| s.site_counts.clone());
    let trials: Vec<SpectralTrial> = (0..n_trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(cfg.seed, k as u64);
            let mut trial = SpectralTrial { trial: k, sites: Vec::new(), lambda: Vec::new(), psi: Vec::new(), error: None, report: None };
            let res = (|| -> Result<()> {
                let sites = p.sites(&mut rng, counts.as_ref().map(|c| c[k % c.len()]))?;
                let inst = Instance::new(&model, &sites, &mu)?;
                let n = sites.len();
                trial.sites = sites.to_vecs();
                trial.lambda = match &cfg.target {
                    Some(TargetConfig::Uniform) => vec![1.0 / n as f64; n],
                    Some(TargetConfig::Explicit { lambda }) => lambda.clone(),
                    Some(TargetConfig::FromDual { psi }) => g_map(inst, psi)?,
                    Some(TargetConfig::Random) | None => random_masses(n, &mut rng),
                };
                trial.psi = damped_newton(inst, &trial.lambda, None, &cfg.solver.newton())?.psi.values;
                let consts = universal_constants(&model, &sites, &mu)?;
                trial.report = Some(spectral_report(inst, &trial.psi, cfg, pw, &consts)?);
                Ok(())
            })();
            if let Err(e) = res {
                trial.error = Some(e.to_string());
            }
            trial
        })
        .collect();
    let reports: Vec<&SpectralReport> = trials.iter().filter_map(|t| t.report.as_ref()).collect();
    Ok(SpectralRunReport {
        header: ReportHeader::new("spectral", cfg),
        connected: reports.iter().filter(|r| r.connected).count(),
        diameter_bound_failures: reports.iter().filter(|r| r.diameter_bound_holds == Some(false)).count(),
        kernel_failures: reports.iter().filter(|r| r.kernel_is_constants == Some(false)).count(),
        lower_bound_held: reports.iter().filter(|r| r.bound_holds).count(),
        failed_trials: trials.iter().filter(|t| t.error.is_some()).count(),
        trials,
    })
}
