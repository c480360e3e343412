//! Derivative of the mass map and the damped Newton solver for `G(psi) = lambda`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost_geometry::{canonicalize, CostFamily, DualVector, ScoreTable};
use crate::error::{Error, Result};
use crate::gridded_measure::{chunked, g_map, mass_and_jacobian, rasterize_cells, GriddedMeasure, Instance};

/// `entries[(j, i)] = dG_j / dpsi_i`. Off-diagonals are interface weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DgMatrix {
    pub entries: DMatrix<f64>,
}

impl DgMatrix {
    pub fn new(entries: DMatrix<f64>) -> Self {
        Self { entries }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        self.entries.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max)
    }

    pub fn symmetry_error(&self) -> f64 {
        (&self.entries - self.entries.transpose()).abs().max()
    }

    pub fn min_off_diagonal(&self) -> f64 {
        let n = self.n();
        let mut m = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.min(self.entries[(i, j)]);
                }
            }
        }
        m
    }

    /// The weighted graph Laplacian `-DG`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        -&self.entries
    }
}

/// Interface-integral form of `DG`: the weight of `i, j` is the integral of
/// the density over the face `{s_i = s_j >= s_k for all k}` divided by
/// `|y_i - y_j|`.
///
/// Both costs have affine scores, so faces are flat. In one and two dimensions
/// each face is clipped exactly (a point or a segment) and the piecewise-constant
/// density is integrated along it. Higher dimensions fall back to counting pixel
/// faces between differently labelled neighbours.
pub fn dg_interface(inst: Instance<'_>, psi: &[f64]) -> Result<DgMatrix> {
    let n = inst.n_sites();
    if psi.len() != n {
        return Err(Error::SizeMismatch { expected: n, got: psi.len() });
    }
    if inst.measure.dim() > 2 {
        return dg_staircase(inst, psi);
    }
    let table = ScoreTable::new(inst.cost, inst.sites, psi)?;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let w = face_integral(&table, inst.measure, i, j) / inst.sites.distance(i, j);
            m[(i, j)] = w;
            m[(j, i)] = w;
        }
    }
    for i in 0..n {
        let s: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
        m[(i, i)] = -s;
    }
    Ok(DgMatrix::new(m))
}

/// Pixel holding `x`, with points on the upper edge assigned to the last pixel.
fn pixel_of(mu: &GriddedMeasure, x: &[f64]) -> usize {
    let (mut p, mut stride) = (0, 1);
    for k in 0..mu.dim() {
        let idx = ((x[k] - mu.lower()[k]) / mu.spacing()[k]).floor().max(0.0) as usize;
        p += idx.min(mu.shape()[k] - 1) * stride;
        stride *= mu.shape()[k];
    }
    p
}

/// Density integral over the face between cells `i` and `j` (dimension 1 or 2).
fn face_integral(t: &ScoreTable, mu: &GriddedMeasure, i: usize, j: usize) -> f64 {
    let dim = mu.dim();
    let (yi, yj) = (t.site(i), t.site(j));
    let normal: Vec<f64> = yi.iter().zip(yj).map(|(a, b)| a - b).collect();
    let nn: f64 = normal.iter().map(|v| v * v).sum();
    // Foot of the face's affine hull: <x, y_i - y_j> = offset_i - offset_j.
    let c = t.offsets_diff(i, j);
    let x0: Vec<f64> = normal.iter().map(|v| v * c / nn).collect();
    let beats_others = |x: &[f64]| (0..t.len()).filter(|&k| k != i && k != j).all(|k| t.score(x, i) >= t.score(x, k));
    let inside = |x: &[f64]| (0..dim).all(|k| x[k] >= mu.lower()[k] && x[k] <= mu.upper()[k]);
    if dim == 1 {
        return if inside(&x0) && beats_others(&x0) { mu.density()[pixel_of(mu, &x0)] } else { 0.0 };
    }
    // Parametrise the line as x0 + t d and clip t against the box and the other sites.
    let len = nn.sqrt();
    let d = [-normal[1] / len, normal[0] / len];
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut keep = |p: f64, q: f64| {
        // Keep the t with p + q t >= 0.
        if q > 0.0 {
            lo = lo.max(-p / q);
        } else if q < 0.0 {
            hi = hi.min(-p / q);
        } else if p < 0.0 {
            hi = f64::NEG_INFINITY;
        }
    };
    for k in 0..2 {
        keep(x0[k] - mu.lower()[k], d[k]);
        keep(mu.upper()[k] - x0[k], -d[k]);
    }
    for k in (0..t.len()).filter(|&k| k != i && k != j) {
        let yk = t.site(k);
        keep(t.score(&x0, i) - t.score(&x0, k), d[0] * (yi[0] - yk[0]) + d[1] * (yi[1] - yk[1]));
    }
    if !(hi > lo) {
        return 0.0;
    }
    // Split the segment where it crosses grid lines and sum length times density.
    let mut cuts = vec![lo, hi];
    for k in 0..2 {
        if d[k] == 0.0 {
            continue;
        }
        let (a, b) = (x0[k] + lo * d[k], x0[k] + hi * d[k]);
        let (from, to) = (a.min(b), a.max(b));
        let h = mu.spacing()[k];
        let first = ((from - mu.lower()[k]) / h).ceil() as i64;
        let last = ((to - mu.lower()[k]) / h).floor() as i64;
        for m in first..=last {
            cuts.push((mu.lower()[k] + m as f64 * h - x0[k]) / d[k]);
        }
    }
    cuts.retain(|c| *c >= lo && *c <= hi);
    cuts.sort_by(f64::total_cmp);
    let density = mu.density();
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            (w[1] - w[0]) * density[pixel_of(mu, &[x0[0] + mid * d[0], x0[1] + mid * d[1]])]
        })
        .sum()
}

/// Staircase estimate: each pixel face separating labels `i` and `j`
/// contributes its area times the face-normal component of the interface
/// normal, times the interpolated density, divided by `|y_i - y_j|`.
fn dg_staircase(inst: Instance<'_>, psi: &[f64]) -> Result<DgMatrix> {
    let part = rasterize_cells(inst, psi)?;
    let mu = inst.measure;
    let n = inst.n_sites();
    let dim = mu.dim();
    let shape = mu.shape();
    let mut strides = vec![1usize; dim];
    for k in 1..dim {
        strides[k] = strides[k - 1] * shape[k - 1];
    }
    let face: Vec<f64> = (0..dim).map(|k| mu.pixel_volume() / mu.spacing()[k]).collect();
    let density = mu.density();
    let sites = inst.sites;
    let parts = chunked(mu.n_pixels(), |r| {
        let mut acc: Vec<(u32, u32, f64)> = Vec::new();
        for p in r {
            let a = part.labels[p] as usize;
            let mut rem = p;
            for k in 0..dim {
                let idx = rem % shape[k];
                rem /= shape[k];
                if idx + 1 >= shape[k] {
                    continue;
                }
                let q = p + strides[k];
                let b = part.labels[q] as usize;
                if a == b {
                    continue;
                }
                let gap = sites.distance(a, b);
                let nk = ((sites.point(a)[k] - sites.point(b)[k]) / gap).abs();
                let rho = 0.5 * (density[p] + density[q]);
                acc.push((a as u32, b as u32, face[k] * nk * rho / gap));
            }
        }
        acc
    });
    let mut m = DMatrix::zeros(n, n);
    for acc in parts {
        for (a, b, v) in acc {
            m[(a as usize, b as usize)] += v;
            m[(b as usize, a as usize)] += v;
        }
    }
    for i in 0..n {
        let s: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
        m[(i, i)] = -s;
    }
    Ok(DgMatrix::new(m))
}

#[derive(Debug, Clone)]
pub struct FiniteDifferenceDg {
    pub matrix: DgMatrix,
    pub step: f64,
    /// Set when the step is under a hundredth of the default, where rounding
    /// in the quadrature starts to dominate the quotient.
    pub below_noise_floor: bool,
}

/// Default central-difference step: moves the interface of the closest pair of
/// sites by a hundredth of a pixel diameter. `G` is piecewise smooth rather than
/// piecewise constant, so small steps are accurate; large ones let small cells
/// vanish or faces appear within the stencil.
pub fn default_fd_step(inst: Instance<'_>) -> Result<f64> {
    let gap = inst.sites.min_pairwise_distance().unwrap_or(1.0);
    Ok(0.01 * inst.measure.pixel_diameter() * gap)
}

pub fn dg_finite_difference(inst: Instance<'_>, psi: &[f64], step: Option<f64>) -> Result<FiniteDifferenceDg> {
    let n = inst.n_sites();
    if psi.len() != n {
        return Err(Error::SizeMismatch { expected: n, got: psi.len() });
    }
    let reference = default_fd_step(inst)?;
    let h = step.unwrap_or(reference);
    if !(h > 0.0) {
        return Err(Error::InvalidInput("finite-difference step must be positive".into()));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut work = psi.to_vec();
    for i in 0..n {
        work[i] = psi[i] + h;
        let up = g_map(inst, &work)?;
        work[i] = psi[i] - h;
        let down = g_map(inst, &work)?;
        work[i] = psi[i];
        let col: Vec<f64> = up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        for j in 0..n {
            m[(j, i)] = col[j] - mean;
        }
    }
    let below = h < 0.01 * reference;
    Ok(FiniteDifferenceDg { matrix: DgMatrix::new(m), step: h, below_noise_floor: below })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub psi: Vec<f64>,
    /// `|G(psi) - lambda|_1`
    pub residual: f64,
    /// Damping factor of the step that produced this iterate; 0 for the start.
    pub step: f64,
    pub min_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveTrace {
    pub iterations: Vec<TraceRow>,
    pub converged: bool,
}

impl SolveTrace {
    /// Number of Newton steps taken.
    pub fn steps(&self) -> usize {
        self.iterations.len().saturating_sub(1)
    }

    pub fn final_residual(&self) -> f64 {
        self.iterations.last().map_or(f64::INFINITY, |r| r.residual)
    }

    pub fn is_monotone(&self) -> bool {
        self.iterations.windows(2).all(|w| w[1].residual < w[0].residual)
    }

    /// One `iteration,residual,step,min_mass` row per iterate.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,residual,step,min_mass\n");
        for (k, r) in self.iterations.iter().enumerate() {
            s.push_str(&format!("{k},{:e},{},{:e}\n", r.residual, r.step, r.min_mass));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-5, max_iter: 50, max_halvings: 40 }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonSolution {
    pub psi: DualVector,
    pub masses: Vec<f64>,
    pub trace: SolveTrace,
}

/// Starting point whose cells are the Voronoi cells of the sites.
pub fn voronoi_start(inst: Instance<'_>) -> Vec<f64> {
    let mut psi: Vec<f64> = (0..inst.n_sites())
        .map(|i| match inst.cost.family {
            CostFamily::QuadraticDistance => 0.0,
            CostFamily::InnerProduct => {
                let y = inst.sites.point(i);
                0.5 * y.iter().map(|v| v * v).sum::<f64>()
            }
        })
        .collect();
    canonicalize(&mut psi);
    psi
}

/// Lowers the dual entry of every empty cell until the cell captures the
/// pixel where it loses by the least.
fn repair_empty_cells(inst: Instance<'_>, psi: &mut [f64]) -> Result<()> {
    let mu = inst.measure;
    let margin = mu.pixel_diameter() * inst.sites.min_pairwise_distance().unwrap_or(1.0);
    for _ in 0..inst.n_sites() {
        let g = g_map(inst, psi)?;
        let Some(i) = (0..g.len()).find(|&i| g[i] <= 0.0) else {
            return Ok(());
        };
        let table = inst.scores(psi)?;
        let deficits = mu.map_centers(|x| {
            let own = table.score(x, i);
            let (_, best) = table.argmax(x);
            best - own
        });
        let least = deficits.iter().cloned().fold(f64::INFINITY, f64::min);
        psi[i] -= least + margin;
    }
    canonicalize(psi);
    Ok(())
}

/// Solves `G(psi) = target` on the zero-sum hyperplane.
///
/// Each step solves the Newton system with the last coordinate pinned, then
/// re-centers. Steps are halved until the residual decreases and every cell
/// keeps at least half of `min(min target, min G(psi_0))`.
pub fn damped_newton(inst: Instance<'_>, target: &[f64], init: Option<&[f64]>, opts: &NewtonOptions) -> Result<NewtonSolution> {
    let n = inst.n_sites();
    if target.len() != n {
        return Err(Error::SizeMismatch { expected: n, got: target.len() });
    }
    if target.iter().any(|v| !(*v > 0.0)) || (target.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("target must lie in the open simplex".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let mut psi = match init {
        Some(p) if p.len() == n => p.to_vec(),
        Some(p) => return Err(Error::SizeMismatch { expected: n, got: p.len() }),
        None => voronoi_start(inst),
    };
    canonicalize(&mut psi);
    repair_empty_cells(inst, &mut psi)?;

    let residual = |g: &[f64]| g.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let min_of = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);

    let (mut g, mut jac) = mass_and_jacobian(inst, &psi)?;
    let mut res = residual(&g);
    let guard = 0.5 * min_of(target).min(min_of(&g));
    let mut trace = SolveTrace::default();
    trace.iterations.push(TraceRow { psi: psi.clone(), residual: res, step: 0.0, min_mass: min_of(&g) });

    for _ in 0..opts.max_iter {
        if res <= opts.tol {
            break;
        }
        let delta = newton_direction(&jac, &g, target)?;
        let mut tau = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = psi.iter().zip(&delta).map(|(p, d)| p + tau * d).collect();
            let (gc, jc) = mass_and_jacobian(inst, &cand)?;
            let rc = residual(&gc);
            if rc < res && min_of(&gc) >= guard {
                psi = cand;
                g = gc;
                jac = jc;
                res = rc;
                accepted = true;
                break;
            }
            tau *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.iterations.push(TraceRow { psi: psi.clone(), residual: res, step: tau, min_mass: min_of(&g) });
    }
    trace.converged = res <= opts.tol;
    if !trace.converged {
        return Err(Error::NotConverged { residual: res, iterations: trace.steps(), trace: Box::new(trace) });
    }
    Ok(NewtonSolution { psi: DualVector::new(psi), masses: g, trace })
}

/// Newton direction with the last coordinate pinned, re-centered to zero sum.
pub(crate) fn newton_direction(jac: &DMatrix<f64>, g: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    let n = g.len();
    let free: Vec<usize> = (0..n - 1).collect();
    let rhs: Vec<f64> = free.iter().map(|&i| target[i] - g[i]).collect();
    let mut d = vec![0.0; n];
    let sol = solve_principal(jac, &free, &rhs)?;
    for (k, &i) in free.iter().enumerate() {
        d[i] = sol[k];
    }
    canonicalize(&mut d);
    Ok(d)
}

/// Solves `jac[idx, idx] x = rhs` where `-jac[idx, idx]` is positive definite
/// when the interface graph is connected.
pub(crate) fn solve_principal(jac: &DMatrix<f64>, idx: &[usize], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = idx.len();
    if m == 0 {
        return Ok(vec![]);
    }
    let a = DMatrix::from_fn(m, m, |r, c| -jac[(idx[r], idx[c])]);
    let b = DVector::from_iterator(m, rhs.iter().map(|v| -v));
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(&b).iter().copied().collect());
    }
    // Disconnected interface graph: regularize lightly.
    let scale = (0..m).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let reg = &a + DMatrix::identity(m, m) * (1e-10 * scale);
    reg.lu()
        .solve(&b)
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::InvalidInput("singular Newton system".into()))
}
