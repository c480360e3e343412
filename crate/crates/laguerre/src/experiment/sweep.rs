use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{random_direction, random_masses, ExperimentConfig, ProblemConfig, SweepConfig};
use super::{fmt_opt, to_json, trial_rng, write_file, ReportHeader, RunStatus};
use crate::cost_geometry::{universal_constants, CostFamily, CostModel, SiteSet, UniversalConstants};
use crate::dual_solver::{damped_newton, dg_interface};
use crate::error::Result;
use crate::gridded_measure::{g_map, rasterize_cells, CellPartition, GriddedMeasure, Instance};
use crate::spectral_analysis::{analyze, measured_epsilon, SpectralReport};
use crate::stability_metrics::{evaluate_bounds, hausdorff_support_function, PerturbationPair, PwParameters, StabilityReport};
use crate::storage_fee::HyperrectangleFee;

/// Directions used for exact support-function distances.
const SUPPORT_DIRECTIONS: usize = 720;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub trial: usize,
    pub t: f64,
    pub n_sites: usize,
    /// `None` on success, otherwise the failure message.
    pub error: Option<String>,
    pub lambda2: Vec<f64>,
    pub psi2: Vec<f64>,
    pub newton_steps: usize,
    /// Largest grid Hausdorff distance over cells.
    pub hausdorff_grid: Option<f64>,
    /// Largest exact distance over cells (inner-product cost, dimension at most two).
    pub hausdorff_exact: Option<f64>,
    pub stability: Option<StabilityReport>,
}

impl SweepRow {
    /// Distance used for trend fits: exact when available.
    pub fn hausdorff(&self) -> Option<f64> {
        self.hausdorff_exact.or(self.hausdorff_grid)
    }

    pub fn violations(&self) -> usize {
        self.stability.as_ref().map_or(0, |s| s.violations().count())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTrial {
    pub trial: usize,
    pub sites: Vec<Vec<f64>>,
    pub lambda1: Vec<f64>,
    pub direction: Vec<f64>,
    pub psi1: Vec<f64>,
    pub spectral: Option<SpectralReport>,
    pub error: Option<String>,
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `log d_H` against `log |lambda_1 - lambda_2|_2`.
    pub hausdorff_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub trials: usize,
    pub rows: usize,
    pub failed_trials: usize,
    pub failed_rows: usize,
    pub violations: usize,
    /// Largest ratio `measured / bound` per bound over applicable rows.
    pub max_ratio: BTreeMap<String, f64>,
    pub min_hausdorff_slope: Option<f64>,
    pub median_hausdorff_slope: Option<f64>,
    pub diameter_bound_failures: usize,
    pub kernel_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub header: ReportHeader,
    pub trials: Vec<SweepTrial>,
    pub summary: SweepSummary,
}

/// Column legend for `sweep.csv`.
pub const SWEEP_COLUMNS: &str = "\
config_hash      hash of the configuration
seed             run seed
trial            trial index (RNG stream)
t                perturbation size before projection
n_sites          number of sites
lambda_l1        |lambda_1 - lambda_2|_1
lambda_l2        |lambda_1 - lambda_2|_2
sym_diff         sum over cells of mu(cell_1 sym-diff cell_2)
sym_diff_bound   4 N |lambda_1 - lambda_2|_1
psi_l2           |psi_1 - psi_2|_2 after removing the mean
psi_linf         |psi_1 - psi_2|_inf after removing the mean
potential_c0     max over the grid of |psi_1^c* - psi_2^c*|
hausdorff_grid   largest grid Hausdorff distance over cells
hausdorff_exact  largest exact Hausdorff distance over cells (blank if unavailable)
violations       asserted bounds violated beyond their slack
error            failure message (blank on success)
";

impl SweepReport {
    pub fn status(&self) -> RunStatus {
        let s = &self.summary;
        if s.violations > 0 || s.diameter_bound_failures > 0 || s.kernel_failures > 0 {
            RunStatus::BoundViolation
        } else if s.failed_trials > 0 || s.failed_rows > 0 {
            RunStatus::SolverFailure
        } else {
            RunStatus::Ok
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.trials.iter().flat_map(|t| t.rows.iter())
    }

    pub fn to_csv(&self) -> String {
        let h = &self.header;
        let mut s = String::from(
            "config_hash,seed,trial,t,n_sites,lambda_l1,lambda_l2,sym_diff,sym_diff_bound,psi_l2,psi_linf,potential_c0,hausdorff_grid,hausdorff_exact,violations,error\n",
        );
        for r in self.rows() {
            let st = r.stability.as_ref();
            let f = |g: fn(&StabilityReport) -> f64| fmt_opt(st.map(g));
            s.push_str(&format!(
                "{},{},{},{:e},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                h.config_hash,
                h.seed,
                r.trial,
                r.t,
                r.n_sites,
                f(|s| s.lambda_l1),
                f(|s| s.lambda_l2),
                f(|s| s.mu_symmetric_difference.total),
                f(|s| 4.0 * s.hausdorff.len() as f64 * s.lambda_l1),
                f(|s| s.psi_l2),
                f(|s| s.psi_linf),
                f(|s| s.potential_c0),
                fmt_opt(r.hausdorff_grid),
                fmt_opt(r.hausdorff_exact),
                r.violations(),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            ));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(dir, "sweep.json", &to_json(self))?;
        write_file(dir, "sweep.csv", &self.to_csv())?;
        write_file(dir, "sweep_columns.txt", SWEEP_COLUMNS)
    }
}

/// Least-squares slope of `ln y` against `ln x` over pairs with both positive.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    problem: &'a ProblemConfig,
    sweep: &'a SweepConfig,
    model: CostModel,
    mu: GriddedMeasure,
    pw: PwParameters,
}

/// Perturbation sweep: per trial draw `lambda_1` and a direction, then for each
/// `t` solve for `lambda_2 = Proj(lambda_1 + t delta)` and measure every distance.
pub fn run_perturb_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let problem = cfg.require_problem()?;
    let sweep = cfg.require_sweep()?;
    let mu = problem.measure()?;
    let pw = PwParameters { q: cfg.stability.q, c_pw: cfg.stability.c_pw.unwrap_or(mu.diameter() / 2.0) };
    let shared = Shared { cfg, problem, sweep, model: problem.cost()?, mu, pw };
    let trials: Vec<SweepTrial> = (0..sweep.trials).into_par_iter().map(|k| run_trial(&shared, k)).collect();
    let summary = summarize(&trials);
    Ok(SweepReport { header: ReportHeader::new("perturb-sweep", cfg), trials, summary })
}

fn run_trial(sh: &Shared<'_>, k: usize) -> SweepTrial {
    let mut rng = trial_rng(sh.cfg.seed, k as u64);
    let count = sh.sweep.site_counts.as_ref().map(|c| c[k % c.len()]);
    let mut trial = SweepTrial {
        trial: k,
        sites: Vec::new(),
        lambda1: Vec::new(),
        direction: Vec::new(),
        psi1: Vec::new(),
        spectral: None,
        error: None,
        rows: Vec::new(),
        hausdorff_slope: None,
    };
    let sites = match sh.problem.sites(&mut rng, count) {
        Ok(s) => s,
        Err(e) => {
            trial.error = Some(e.to_string());
            return trial;
        }
    };
    let n = sites.len();
    trial.sites = sites.to_vecs();
    trial.lambda1 = random_masses(n, &mut rng);
    trial.direction = random_direction(n, &mut rng);
    if let Err(e) = fill_trial(sh, &sites, &mut trial) {
        trial.error = Some(e.to_string());
    }
    let pts: Vec<(f64, f64)> = trial
        .rows
        .iter()
        .filter_map(|r| Some((r.stability.as_ref()?.lambda_l2, r.hausdorff()?)))
        .collect();
    trial.hausdorff_slope = log_log_slope(&pts);
    trial
}

fn fill_trial(sh: &Shared<'_>, sites: &SiteSet, trial: &mut SweepTrial) -> Result<()> {
    let inst = Instance::new(&sh.model, sites, &sh.mu)?;
    let n = sites.len();
    let opts = sh.cfg.solver.newton();
    let sol1 = damped_newton(inst, &trial.lambda1, None, &opts)?;
    trial.psi1 = sol1.psi.values.clone();
    let consts = universal_constants(&sh.model, sites, &sh.mu)?;
    trial.spectral = Some(spectral_report(inst, &trial.psi1, sh.cfg, sh.pw, &consts)?);
    let p1 = rasterize_cells(inst, &trial.psi1)?;
    let floor = sh.sweep.mass_floor / n as f64;
    let fee = HyperrectangleFee::new(vec![floor; n], vec![1.0; n])?;
    for &t in &sh.sweep.t_grid {
        let moved: Vec<f64> = trial.lambda1.iter().zip(&trial.direction).map(|(l, d)| l + t * d).collect();
        let mut row = SweepRow {
            trial: trial.trial,
            t,
            n_sites: n,
            error: None,
            lambda2: Vec::new(),
            psi2: Vec::new(),
            newton_steps: 0,
            hausdorff_grid: None,
            hausdorff_exact: None,
            stability: None,
        };
        if let Err(e) = fill_row(sh, inst, &consts, trial, &p1, fee.project(&moved), &mut row) {
            row.error = Some(e.to_string());
        }
        trial.rows.push(row);
    }
    Ok(())
}

fn fill_row(
    sh: &Shared<'_>,
    inst: Instance<'_>,
    consts: &UniversalConstants,
    trial: &SweepTrial,
    p1: &CellPartition,
    lambda2: Result<Vec<f64>>,
    row: &mut SweepRow,
) -> Result<()> {
    row.lambda2 = lambda2?;
    let sol2 = damped_newton(inst, &row.lambda2, Some(&trial.psi1), &sh.cfg.solver.newton())?;
    row.newton_steps = sol2.trace.steps();
    row.psi2 = sol2.psi.values;
    let p2 = rasterize_cells(inst, &row.psi2)?;
    let pair = PerturbationPair { psi1: &trial.psi1, psi2: &row.psi2, lambda1: &trial.lambda1, lambda2: &row.lambda2, p1, p2: &p2 };
    let report = evaluate_bounds(inst.cost, inst.sites, inst.measure, pair, consts, sh.pw)?;
    row.hausdorff_grid = report.hausdorff.iter().flatten().copied().reduce(f64::max);
    if sh.model.family == CostFamily::InnerProduct && sh.mu.dim() <= 2 {
        row.hausdorff_exact = (0..inst.n_sites())
            .filter_map(|i| {
                hausdorff_support_function(inst.cost, inst.sites, &trial.psi1, &row.psi2, i, inst.measure, SUPPORT_DIRECTIONS).ok()
            })
            .reduce(f64::max);
    }
    row.stability = Some(report);
    Ok(())
}

pub(super) fn spectral_report(
    inst: Instance<'_>,
    psi: &[f64],
    cfg: &ExperimentConfig,
    pw: PwParameters,
    consts: &UniversalConstants,
) -> Result<SpectralReport> {
    let dg = dg_interface(inst, psi)?;
    let eps = measured_epsilon(&g_map(inst, psi)?, cfg.stability.epsilon_tol);
    analyze(&dg, eps, pw.q, pw.c_pw, consts)
}

fn summarize(trials: &[SweepTrial]) -> SweepSummary {
    let rows: Vec<&SweepRow> = trials.iter().flat_map(|t| t.rows.iter()).collect();
    let mut max_ratio: BTreeMap<String, f64> = BTreeMap::new();
    for r in &rows {
        let Some(st) = &r.stability else { continue };
        for b in &st.bounds {
            if b.ratio.is_finite() && b.status != crate::stability_metrics::BoundStatus::NotApplicable {
                let e = max_ratio.entry(b.name.clone()).or_insert(f64::NEG_INFINITY);
                *e = e.max(b.ratio);
            }
        }
    }
    let mut slopes: Vec<f64> = trials.iter().filter_map(|t| t.hausdorff_slope).collect();
    slopes.sort_by(f64::total_cmp);
    let spectral: Vec<&SpectralReport> = trials.iter().filter_map(|t| t.spectral.as_ref()).collect();
    SweepSummary {
        trials: trials.len(),
        rows: rows.len(),
        failed_trials: trials.iter().filter(|t| t.error.is_some()).count(),
        failed_rows: rows.iter().filter(|r| r.error.is_some()).count(),
        violations: rows.iter().map(|r| r.violations()).sum(),
        max_ratio,
        min_hausdorff_slope: slopes.first().copied(),
        median_hausdorff_slope: (!slopes.is_empty()).then(|| slopes[slopes.len() / 2]),
        diameter_bound_failures: spectral.iter().filter(|s| s.diameter_bound_holds == Some(false)).count(),
        kernel_failures: spectral.iter().filter(|s| s.kernel_is_constants == Some(false)).count(),
    }
}
