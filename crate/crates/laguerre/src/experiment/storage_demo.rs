use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{to_json, write_file, ExperimentConfig, ReportHeader, RunStatus};
use crate::cost_geometry::{CostFamily, CostModel, DualVector, SiteSet};
use crate::error::{Error, Result};
use crate::exchange_digraph::{build_digraph, check_acyclic, topological_order, verify_single_box_perturbation, Edge, SingleBoxReport};
use crate::gridded_measure::{rasterize_cells, GriddedMeasure, Instance};
use crate::stability_metrics::symmetric_difference;
use crate::storage_fee::{solve_storage_fee, HyperrectangleFee, StorageOptions};

/// Tolerance on `|lambda_1 - lambda_2|_1` in the sharpness identities.
pub const L1_TOL: f64 = 1e-6;
/// Tolerance on the second dual vector, modulo constants.
pub const PSI_TOL: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn close(name: &str, value: f64, expected: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, expected, tolerance, pass: (value - expected).abs() <= tolerance }
    }

    fn flag(name: &str, pass: bool) -> Self {
        let v = if pass { 1.0 } else { 0.0 };
        Self { name: name.into(), value: v, expected: 1.0, tolerance: 0.0, pass }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageDemoReport {
    pub header: ReportHeader,
    pub n: usize,
    /// Pixels per unit length.
    pub resolution: usize,
    pub fee1: HyperrectangleFee,
    pub fee2: HyperrectangleFee,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
    pub expected_psi2: Vec<f64>,
    pub kkt_residuals: [f64; 2],
    pub lambda_l1: f64,
    pub symmetric_difference: f64,
    pub edges: Vec<Edge>,
    pub near_threshold: Vec<Edge>,
    pub threshold: f64,
    pub topological_order: Option<Vec<usize>>,
    pub single_box: SingleBoxReport,
    pub checks: Vec<Check>,
}

impl StorageDemoReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn status(&self) -> RunStatus {
        if self.all_pass() {
            RunStatus::Ok
        } else {
            RunStatus::BoundViolation
        }
    }

    pub fn edge_list(&self) -> String {
        self.edges.iter().map(|e| format!("{} {} {:e}\n", e.from, e.to, e.weight)).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(dir, "storage_demo.json", &to_json(self))?;
        write_file(dir, "digraph.txt", &self.edge_list())
    }
}

/// Uniform measure on `[0, n]` with `resolution` pixels per unit and sites at the
/// interval midpoints `i + 1/2`, under the inner-product cost.
pub fn sharpness_instance(n: usize, resolution: usize) -> Result<(CostModel, SiteSet, GriddedMeasure)> {
    let model = CostModel::new(CostFamily::InnerProduct, 1)?;
    let sites = SiteSet::new(&(0..n).map(|i| vec![i as f64 + 0.5]).collect::<Vec<_>>())?;
    let mu = GriddedMeasure::uniform(vec![0.0], vec![n as f64], vec![n * resolution])?;
    Ok((model, sites, mu))
}

/// Runs the sharpness example: capacities `1/N` everywhere, then the last one
/// doubled. Mass shifts one cell to the right, so every interior cell changes
/// while only two masses move.
pub fn run_storage_demo(cfg: &ExperimentConfig) -> Result<StorageDemoReport> {
    let sc = cfg.require_storage()?;
    let (n, res) = (sc.n, sc.resolution);
    let (model, sites, mu) = sharpness_instance(n, res)?;
    let inst = Instance::new(&model, &sites, &mu)?;
    let nf = n as f64;
    let fee1 = HyperrectangleFee::new(vec![0.0; n], vec![1.0 / nf; n])?;
    let fee2 = fee1.enlarge_upper(n - 1, 1.0 / nf)?;
    let opts = StorageOptions { newton: cfg.solver.newton(), ..StorageOptions::default() };
    let s1 = solve_storage_fee(inst, &fee1, &opts)?;
    let s2 = solve_storage_fee(inst, &fee2, &opts)?;
    let p1 = rasterize_cells(inst, &s1.psi.values)?;
    let p2 = rasterize_cells(inst, &s2.psi.values)?;
    let sym = symmetric_difference(&p1, &p2, &mu)?.total;
    let g = build_digraph(&p1, &p2, &mu, None)?;
    let tol = 3.0 * g.threshold * nf;
    let single = verify_single_box_perturbation(&g, &fee1, &fee2, &s1.lambda, &s2.lambda, tol)?;
    let order = topological_order(&g).ok();
    let lambda_l1: f64 = s1.lambda.iter().zip(&s2.lambda).map(|(a, b)| (a - b).abs()).sum();
    let expected_psi2: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { ((i - 1) * i) as f64 / 2.0 }).collect();
    let psi_err = s2.psi.dist_mod_constants(&DualVector::new(expected_psi2.clone()));

    let checks = vec![
        Check::close("lambda_l1", lambda_l1, 2.0 / nf, L1_TOL),
        Check::close("symmetric_difference", sym, (2.0 * nf - 2.0) / nf, 2.0 * nf / res as f64),
        Check::close("psi2_mod_constants", psi_err, 0.0, PSI_TOL),
        Check::flag("acyclic", check_acyclic(&g).acyclic),
        Check::flag("order_ends_at_enlarged", order.as_ref().and_then(|o| o.last()) == Some(&(n - 1))),
        Check::flag("single_box_clauses", single.all_hold()),
    ];
    if checks.iter().any(|c| c.value.is_nan()) {
        return Err(Error::InvalidInput("storage demo produced NaN".into()));
    }
    Ok(StorageDemoReport {
        header: ReportHeader::new("storage-demo", cfg),
        n,
        resolution: res,
        lambda1: s1.lambda,
        lambda2: s2.lambda,
        psi1: s1.psi.canonical().values,
        psi2: s2.psi.canonical().values,
        expected_psi2,
        kkt_residuals: [s1.kkt_residual, s2.kkt_residual],
        lambda_l1,
        symmetric_difference: sym,
        edges: g.edges.clone(),
        near_threshold: g.near_threshold.clone(),
        threshold: g.threshold,
        topological_order: order,
        single_box: single,
        checks,
        fee1,
        fee2,
    })
}
