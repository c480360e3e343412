//! Spectrum of the weighted graph Laplacian `L = -DG` and its lower bounds.
//!
//! The second eigenvalue of `L` is bounded below in two stages: the graph of
//! interfaces heavier than a threshold `tau` is connected, and a connected
//! unit-weight graph has `lambda_2 >= 4 / (N diam)`. Only the second stage is
//! free of the Poincare-Wirtinger constant, so it is the one reports assert.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cost_geometry::UniversalConstants;
use crate::dual_solver::DgMatrix;
use crate::error::{Error, Result};

/// Relative asymmetry tolerated before the spectrum is refused.
pub const SYMMETRY_TOL: f64 = 1e-9;

fn ascending_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigenvalues of `-DG` in ascending order.
pub fn laplacian_spectrum(dg: &DgMatrix) -> Result<Vec<f64>> {
    let scale = dg.entries.abs().max().max(1.0);
    let asym = dg.symmetry_error();
    if !(asym <= SYMMETRY_TOL * scale) {
        return Err(Error::InvalidInput(format!("DG is not symmetric (error {asym:e})")));
    }
    let l = dg.laplacian();
    Ok(ascending_eigenvalues((&l + l.transpose()) * 0.5))
}

/// Edge threshold `2^{1-1/q} eps^{1/q} / (C_grad N^2 C_PW)` above which interfaces
/// connect every cell when all masses exceed `eps`.
pub fn connectivity_threshold(n: usize, eps: f64, q: f64, c_pw: f64, c_grad: f64) -> f64 {
    2f64.powf(1.0 - 1.0 / q) * eps.max(0.0).powf(1.0 / q) / (c_grad * (n * n) as f64 * c_pw)
}

/// Lower bound `2^{3-1/q} eps^{1/q} / (C_grad N^4 C_PW)` on the second eigenvalue.
pub fn spectral_lower_bound(n: usize, eps: f64, q: f64, c_pw: f64, c_grad: f64) -> f64 {
    2f64.powf(3.0 - 1.0 / q) * eps.max(0.0).powf(1.0 / q) / (c_grad * (n as f64).powi(4) * c_pw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGraph {
    pub tau: f64,
    /// Unordered pairs `(i, j)`, `i < j`, with `w_ij >= tau`.
    pub edges: Vec<(usize, usize)>,
    pub connected: bool,
    /// Unweighted diameter; `None` when disconnected.
    pub diameter: Option<usize>,
}

impl ThresholdGraph {
    /// Keeps the pairs whose symmetrized weight is at least `tau` (and positive).
    pub fn from_weights(dg: &DgMatrix, tau: f64) -> Self {
        let n = dg.n();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w = 0.5 * (dg.weight(i, j) + dg.weight(j, i));
                if w > 0.0 && w >= tau {
                    edges.push((i, j));
                }
            }
        }
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in &edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut diameter = Some(0);
        for s in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            let ecc = dist.iter().copied().max().unwrap_or(0);
            if ecc == usize::MAX {
                diameter = None;
                break;
            }
            diameter = diameter.map(|d| d.max(ecc));
        }
        Self { tau, edges, connected: diameter.is_some(), diameter }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Laplacian of the graph with every kept edge of weight one.
    pub fn unit_laplacian(&self, n: usize) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(n, n);
        for &(i, j) in &self.edges {
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
        }
        l
    }
}

/// Connectivity of the interfaces heavier than the threshold for mass floor `eps`.
pub fn threshold_connectivity(dg: &DgMatrix, eps: f64, q: f64, c_pw: f64, consts: &UniversalConstants) -> ThresholdGraph {
    ThresholdGraph::from_weights(dg, connectivity_threshold(dg.n(), eps, q, c_pw, consts.c_grad))
}

/// Mass floor used for `eps`: the smallest measured mass minus the quadrature tolerance.
pub fn measured_epsilon(masses: &[f64], tol: f64) -> f64 {
    (masses.iter().copied().fold(f64::INFINITY, f64::min) - tol).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Eigenvalues of `-DG`, ascending.
    pub eigenvalues: Vec<f64>,
    pub fiedler_value: f64,
    pub epsilon: f64,
    pub q: f64,
    pub c_pw: f64,
    pub tau: f64,
    pub connected: bool,
    pub diameter: Option<usize>,
    /// Lower bound on the Fiedler value; depends on the configured `C_PW`.
    pub bound_value: f64,
    pub bound_holds: bool,
    /// Second eigenvalue of the unit-weight thresholded Laplacian.
    pub unit_fiedler_value: f64,
    /// `4 / (N diam)`, when the thresholded graph is connected and `N >= 2`.
    pub diameter_bound: Option<f64>,
    pub diameter_bound_holds: Option<bool>,
    /// `lambda_2 > kernel_tol` whenever the thresholded graph is connected.
    pub kernel_is_constants: Option<bool>,
}

/// Kernel tolerance for the Fiedler value.
pub const KERNEL_TOL: f64 = 1e-10;
/// Absolute slack in the unit-weight diameter bound, for eigensolver rounding.
pub const DIAMETER_BOUND_TOL: f64 = 1e-10;

/// Assembles the report for a precomputed `spectrum` of `dg`.
pub fn better_bound_check(
    spectrum: &[f64],
    dg: &DgMatrix,
    eps: f64,
    q: f64,
    c_pw: f64,
    consts: &UniversalConstants,
) -> Result<SpectralReport> {
    let n = dg.n();
    if spectrum.len() != n {
        return Err(Error::SizeMismatch { expected: n, got: spectrum.len() });
    }
    if !(q >= 1.0) || !(c_pw > 0.0) {
        return Err(Error::InvalidInput(format!("need q >= 1 and C_PW > 0, got q = {q}, C_PW = {c_pw}")));
    }
    let graph = threshold_connectivity(dg, eps, q, c_pw, consts);
    let fiedler_value = spectrum.get(1).copied().unwrap_or(0.0);
    let unit = ascending_eigenvalues(graph.unit_laplacian(n));
    let unit_fiedler_value = unit.get(1).copied().unwrap_or(0.0);
    let bound_value = spectral_lower_bound(n, eps, q, c_pw, consts.c_grad);
    let diameter_bound = match graph.diameter {
        Some(d) if n >= 2 && d > 0 => Some(4.0 / (n as f64 * d as f64)),
        _ => None,
    };
    Ok(SpectralReport {
        eigenvalues: spectrum.to_vec(),
        fiedler_value,
        epsilon: eps,
        q,
        c_pw,
        tau: graph.tau,
        connected: graph.connected,
        diameter: graph.diameter,
        bound_value,
        bound_holds: fiedler_value >= bound_value,
        unit_fiedler_value,
        diameter_bound,
        diameter_bound_holds: diameter_bound.map(|b| unit_fiedler_value >= b - DIAMETER_BOUND_TOL),
        kernel_is_constants: (graph.connected && n >= 2).then_some(fiedler_value > KERNEL_TOL),
    })
}

/// Spectrum and report in one call.
pub fn analyze(dg: &DgMatrix, eps: f64, q: f64, c_pw: f64, consts: &UniversalConstants) -> Result<SpectralReport> {
    let spectrum = laplacian_spectrum(dg)?;
    better_bound_check(&spectrum, dg, eps, q, c_pw, consts)
}
