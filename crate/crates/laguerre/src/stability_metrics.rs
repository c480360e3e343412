//! Distances between two partitions and the stability bounds that relate them.
//!
//! All geometric quantities are measured on the pixel grid: sets are the pixel
//! centers carrying a label, Lebesgue measures are pixel counts times the pixel
//! volume. Each bound is checked with an explicit grid slack recorded next to it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cost_geometry::{c_star_on_grid, canonicalize, CostFamily, CostModel, SiteSet, UniversalConstants};
use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::gridded_measure::{bounding_box, diameter_of_mask, inradius_of_mask, CellPartition, GriddedMeasure, Window};
use crate::polygon;

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * PI / n as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricDifference {
    pub per_cell: Vec<f64>,
    pub total: f64,
}

fn check_pair(p1: &CellPartition, p2: &CellPartition, mu: &GriddedMeasure) -> Result<()> {
    if p1.shape() != mu.shape() || p2.shape() != mu.shape() {
        return Err(Error::GridMismatch);
    }
    if p1.n_sites() != p2.n_sites() {
        return Err(Error::SizeMismatch { expected: p1.n_sites(), got: p2.n_sites() });
    }
    Ok(())
}

fn sym_diff_weighted(p1: &CellPartition, p2: &CellPartition, mu: &GriddedMeasure, weight: impl Fn(usize) -> f64) -> SymmetricDifference {
    let mut per_cell = vec![0.0; p1.n_sites()];
    for p in 0..mu.n_pixels() {
        let (a, b) = (p1.labels[p] as usize, p2.labels[p] as usize);
        if a != b {
            let w = weight(p);
            per_cell[a] += w;
            per_cell[b] += w;
        }
    }
    let total = per_cell.iter().sum();
    SymmetricDifference { per_cell, total }
}

/// `mu(Lag_i(psi_1) sym-diff Lag_i(psi_2))` for every cell, and their sum.
pub fn symmetric_difference(p1: &CellPartition, p2: &CellPartition, mu: &GriddedMeasure) -> Result<SymmetricDifference> {
    check_pair(p1, p2, mu)?;
    Ok(sym_diff_weighted(p1, p2, mu, |p| mu.pixel_mass(p)))
}

/// Lebesgue measure of each cell's symmetric difference.
pub fn lebesgue_symmetric_difference(p1: &CellPartition, p2: &CellPartition, mu: &GriddedMeasure) -> Result<SymmetricDifference> {
    check_pair(p1, p2, mu)?;
    let vol = mu.pixel_volume();
    Ok(sym_diff_weighted(p1, p2, mu, |_| vol))
}

/// `sup_{x in from} d(x, to)` over pixel centers, or `None` if either mask is empty.
pub(crate) fn directed_hausdorff(from: &[bool], to: &[bool], mu: &GriddedMeasure) -> Option<f64> {
    let union: Vec<bool> = from.iter().zip(to).map(|(a, b)| *a || *b).collect();
    bounding_box(to, mu)?;
    bounding_box(from, mu)?;
    let (lo, hi) = bounding_box(&union, mu)?;
    let win = Window::around(&lo, &hi, 0, mu, true);
    let target = win.gather(mu, |g| g.is_some_and(|p| to[p]));
    let source = win.gather(mu, |g| g.is_some_and(|p| from[p]));
    let d2 = squared_edt(&target, &win.shape, mu.spacing());
    let worst = (0..win.len()).filter(|&q| source[q]).map(|q| d2[q]).fold(0.0, f64::max);
    Some(worst.sqrt())
}

fn hausdorff_of_masks(a: &[bool], b: &[bool], mu: &GriddedMeasure) -> Option<f64> {
    Some(directed_hausdorff(a, b, mu)?.max(directed_hausdorff(b, a, mu)?))
}

/// Hausdorff distance between cell `i` of two partitions, from distance transforms.
pub fn hausdorff_distance(p1: &CellPartition, p2: &CellPartition, i: usize, mu: &GriddedMeasure) -> Result<f64> {
    check_pair(p1, p2, mu)?;
    if i >= p1.n_sites() {
        return Err(Error::IndexOutOfRange { index: i, n: p1.n_sites() });
    }
    hausdorff_of_masks(&p1.mask(i), &p2.mask(i), mu).ok_or(Error::EmptyCell(i))
}

/// `M` equally spaced unit vectors on the circle.
pub fn circle_directions(m: usize) -> Vec<[f64; 2]> {
    (0..m).map(|k| {
        let t = 2.0 * PI * k as f64 / m as f64;
        [t.cos(), t.sin()]
    })
    .collect()
}

/// Exact cell `i` as a polygon: the box cut by `<x, y_j - y_i> <= psi_j - psi_i`.
fn cell_polygon(sites: &SiteSet, psi: &[f64], i: usize, mu: &GriddedMeasure) -> Vec<[f64; 2]> {
    let (lo, hi) = (mu.lower(), mu.upper());
    let mut poly = polygon::rectangle([lo[0], lo[1]], [hi[0], hi[1]]);
    let yi = sites.point(i);
    for j in 0..sites.len() {
        if j == i || poly.is_empty() {
            continue;
        }
        let yj = sites.point(j);
        poly = polygon::clip(&poly, [yj[0] - yi[0], yj[1] - yi[1]], psi[j] - psi[i]);
    }
    poly
}

fn cell_interval(sites: &SiteSet, psi: &[f64], i: usize, mu: &GriddedMeasure) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (mu.lower()[0], mu.upper()[0]);
    let yi = sites.point(i)[0];
    for j in 0..sites.len() {
        if j == i {
            continue;
        }
        let (a, b) = (sites.point(j)[0] - yi, psi[j] - psi[i]);
        if a > 0.0 {
            hi = hi.min(b / a);
        } else {
            lo = lo.max(b / a);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Hausdorff distance between the exact cells `Lag_i(psi_1)` and `Lag_i(psi_2)`
/// of the inner-product cost, as the largest gap between support functions over
/// `directions` unit vectors. Defined for dimensions one and two.
pub fn hausdorff_support_function(
    model: &CostModel,
    sites: &SiteSet,
    psi1: &[f64],
    psi2: &[f64],
    i: usize,
    mu: &GriddedMeasure,
    directions: usize,
) -> Result<f64> {
    if model.family != CostFamily::InnerProduct {
        return Err(Error::Unsupported("support functions need the inner-product cost".into()));
    }
    let n = sites.len();
    for len in [psi1.len(), psi2.len()] {
        if len != n {
            return Err(Error::SizeMismatch { expected: n, got: len });
        }
    }
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, n });
    }
    mu.check_dim(sites.dim())?;
    match sites.dim() {
        1 => {
            let a = cell_interval(sites, psi1, i, mu).ok_or(Error::EmptyCell(i))?;
            let b = cell_interval(sites, psi2, i, mu).ok_or(Error::EmptyCell(i))?;
            Ok((a.0 - b.0).abs().max((a.1 - b.1).abs()))
        }
        2 => {
            let a = cell_polygon(sites, psi1, i, mu);
            let b = cell_polygon(sites, psi2, i, mu);
            if a.is_empty() || b.is_empty() {
                return Err(Error::EmptyCell(i));
            }
            Ok(circle_directions(directions.max(1))
                .into_iter()
                .map(|v| (polygon::support(&a, v) - polygon::support(&b, v)).abs())
                .fold(0.0, f64::max))
        }
        d => Err(Error::Unsupported(format!("support-function distance in dimension {d}"))),
    }
}

/// `max_x |psi_1^{c*}(x) - psi_2^{c*}(x)|` over pixel centers.
pub fn uniform_potential_distance(model: &CostModel, sites: &SiteSet, psi1: &[f64], psi2: &[f64], mu: &GriddedMeasure) -> Result<f64> {
    let a = c_star_on_grid(model, sites, psi1, mu)?;
    let b = c_star_on_grid(model, sites, psi2, mu)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Inscribed-ball constant `2^{n-1} / (omega_n (n+2)^n diam^{n-1})`.
pub fn ball_constant(n: usize, diam: f64) -> f64 {
    2f64.powi(n as i32 - 1) / (unit_ball_volume(n) * ((n + 2) as f64).powi(n as i32) * diam.powi(n as i32 - 1))
}

/// Lower bound on `L(B \ A)` for convex `A` inside convex `B`, given
/// `sup_{x in B} d(x, A)`, `L(A)`, `diam(A)` and `diam(B)`.
pub fn set_difference_lower_bound(n: usize, dist: f64, leb_a: f64, diam_a: f64, diam_b: f64) -> f64 {
    if leb_a <= 0.0 || diam_b <= 0.0 {
        return 0.0;
    }
    let ca = ball_constant(n, diam_a);
    let arg = (1.0 - 2.0 * ca * ca * leb_a * leb_a / (diam_b * diam_b)).clamp(-1.0, 1.0);
    unit_ball_volume(n) * dist.powi(n as i32) / (2.0 * PI).powi(n as i32 - 1) * arg.acos().powi(n as i32 - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Holds,
    Violated,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub cell: Option<usize>,
    /// Left-hand side as measured on the grid.
    pub measured: f64,
    pub bound: f64,
    /// `measured / bound`, or 0 when both vanish.
    pub ratio: f64,
    /// Grid allowance used when deciding the status.
    pub slack: f64,
    pub status: BoundStatus,
    /// False for bounds that depend on a configured constant that cannot be verified.
    pub asserted: bool,
    /// For conditional bounds, `rhs - lhs` of the hypothesis; positive means it held.
    pub hypothesis_margin: Option<f64>,
}

impl BoundCheck {
    fn new(name: &str, cell: Option<usize>, measured: f64, bound: f64, slack: f64, asserted: bool) -> Self {
        let ratio = if bound > 0.0 {
            measured / bound
        } else if measured <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let status = if measured <= bound + slack { BoundStatus::Holds } else { BoundStatus::Violated };
        Self { name: name.into(), cell, measured, bound, ratio, slack, status, asserted, hypothesis_margin: None }
    }

    fn with_hypothesis(mut self, margin: f64) -> Self {
        self.hypothesis_margin = Some(margin);
        if margin <= 0.0 {
            self.status = BoundStatus::NotApplicable;
        }
        self
    }

    fn not_applicable(name: &str, cell: Option<usize>, asserted: bool) -> Self {
        Self {
            name: name.into(),
            cell,
            measured: f64::NAN,
            bound: f64::NAN,
            ratio: f64::NAN,
            slack: 0.0,
            status: BoundStatus::NotApplicable,
            asserted,
            hypothesis_margin: None,
        }
    }

    /// Asserted and violated beyond its slack.
    pub fn is_violation(&self) -> bool {
        self.asserted && self.status == BoundStatus::Violated
    }
}

/// Exponent `q` of the Poincare-Wirtinger inequality and its constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PwParameters {
    pub q: f64,
    pub c_pw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub mu_symmetric_difference: SymmetricDifference,
    pub lebesgue_symmetric_difference: SymmetricDifference,
    /// `None` where a cell is empty in either partition.
    pub hausdorff: Vec<Option<f64>>,
    pub psi_l2: f64,
    pub psi_linf: f64,
    pub potential_c0: f64,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub constants: UniversalConstants,
    pub pw: PwParameters,
    /// Constant of the cell-difference estimate, `2 H^{n-1}(boundary) / eps_tw`.
    pub c_delta: f64,
    pub bounds: Vec<BoundCheck>,
}

impl StabilityReport {
    pub fn violations(&self) -> impl Iterator<Item = &BoundCheck> {
        self.bounds.iter().filter(|b| b.is_violation())
    }

    pub fn max_ratio(&self, name: &str) -> Option<f64> {
        self.bounds
            .iter()
            .filter(|b| b.name == name && b.status != BoundStatus::NotApplicable)
            .map(|b| b.ratio)
            .fold(None, |m, r| Some(m.map_or(r, |m: f64| m.max(r))))
    }
}

/// Inputs describing one perturbation pair.
#[derive(Debug, Clone, Copy)]
pub struct PerturbationPair<'a> {
    pub psi1: &'a [f64],
    pub psi2: &'a [f64],
    pub lambda1: &'a [f64],
    pub lambda2: &'a [f64],
    pub p1: &'a CellPartition,
    pub p2: &'a CellPartition,
}

/// Measures every stability quantity of the pair and checks each bound.
pub fn evaluate_bounds(
    model: &CostModel,
    sites: &SiteSet,
    mu: &GriddedMeasure,
    pair: PerturbationPair<'_>,
    consts: &UniversalConstants,
    pw: PwParameters,
) -> Result<StabilityReport> {
    let PerturbationPair { psi1, psi2, lambda1, lambda2, p1, p2 } = pair;
    check_pair(p1, p2, mu)?;
    let n = sites.len();
    for len in [psi1.len(), psi2.len(), lambda1.len(), lambda2.len(), p1.n_sites()] {
        if len != n {
            return Err(Error::SizeMismatch { expected: n, got: len });
        }
    }
    let dim = mu.dim();
    let nf = n as f64;
    let res = *mu.shape().iter().max().unwrap() as f64;
    let h = mu.pixel_diameter();
    let bd = consts.bd_area;
    let geom_slack = 2.0 * h * bd;

    let mut dpsi: Vec<f64> = psi1.iter().zip(psi2).map(|(a, b)| a - b).collect();
    canonicalize(&mut dpsi);
    let psi_l2 = dpsi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let psi_linf = dpsi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dl: Vec<f64> = lambda1.iter().zip(lambda2).map(|(a, b)| a - b).collect();
    let lambda_l1: f64 = dl.iter().map(|v| v.abs()).sum();
    let lambda_l2 = dl.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mu_sd = symmetric_difference(p1, p2, mu)?;
    let leb_sd = lebesgue_symmetric_difference(p1, p2, mu)?;
    let potential_c0 = uniform_potential_distance(model, sites, psi1, psi2, mu)?;

    let masks1: Vec<Vec<bool>> = (0..n).map(|i| p1.mask(i)).collect();
    let masks2: Vec<Vec<bool>> = (0..n).map(|i| p2.mask(i)).collect();
    let hausdorff: Vec<Option<f64>> = (0..n).map(|i| hausdorff_of_masks(&masks1[i], &masks2[i], mu)).collect();

    let c_delta = 2.0 * bd / consts.eps_tw;
    let omega = unit_ball_volume(dim);
    let diam_x = mu.diameter();
    let mut bounds = Vec::new();

    // Total mu-symmetric difference against the l1 change of masses.
    bounds.push(BoundCheck::new("symmetric_difference", None, mu_sd.total, 4.0 * nf * lambda_l1, 4.0 * nf / res, true));

    // Inverse Lipschitz bound for G; needs q > 1 and the configured C_PW.
    let min1 = lambda1.iter().cloned().fold(f64::INFINITY, f64::min);
    let min2 = lambda2.iter().cloned().fold(f64::INFINITY, f64::min);
    let m = min1.max(min2);
    let q = pw.q;
    if q > 1.0 && m > 0.0 {
        let bound = q * nf.powi(4) * consts.c_grad * pw.c_pw * lambda_l2 / (4.0 * (q - 1.0) * m.powf(1.0 / q));
        bounds.push(BoundCheck::new("dual_inverse_lipschitz", None, psi_l2, bound, 0.0, false));
    } else {
        bounds.push(BoundCheck::not_applicable("dual_inverse_lipschitz", None, false));
    }

    // Hausdorff bound through dual differences: constants of the proof with C_exp = 1.
    let c1_haus = c_delta * (2.0 * PI).powi(dim as i32 - 1) / omega;
    let c2_haus = 2f64.powi(2 * dim as i32 - 1) / (4.0 * omega * omega * ((dim + 2) as f64).powi(2 * dim as i32) * diam_x.powi(2 * dim as i32));
    let vol = mu.pixel_volume();
    for i in 0..n {
        let leb1 = p1.lebesgue[i];
        let leb2 = p2.lebesgue[i];
        let leb_max = leb1.max(leb2);

        // Cell difference in Lebesgue measure against the dual change.
        let diff12 = (0..mu.n_pixels()).filter(|&p| masks1[i][p] && !masks2[i][p]).count() as f64 * vol;
        let diff21 = (0..mu.n_pixels()).filter(|&p| masks2[i][p] && !masks1[i][p]).count() as f64 * vol;
        let cell_bound = c_delta * nf * psi_linf;
        bounds.push(BoundCheck::new("cell_difference", Some(i), diff12.max(diff21), cell_bound, geom_slack, true));

        let Some(dh) = hausdorff[i] else {
            for name in ["lebesgue_hausdorff", "hausdorff_dual", "hausdorff_rate"] {
                bounds.push(BoundCheck::not_applicable(name, Some(i), name != "hausdorff_rate"));
            }
            continue;
        };
        bounds.push(BoundCheck::new("lebesgue_hausdorff", Some(i), leb_sd.per_cell[i], 2.0 * dh * bd, geom_slack, true));

        // Grid distances can exceed the true one by a pixel diameter.
        let dh_low = (dh - h).max(0.0);
        let arc = (1.0 - c2_haus * leb_max * leb_max).clamp(-1.0, 1.0).acos().powi(dim as i32 - 1);
        let haus_bound = c1_haus * nf * psi_linf / arc;
        let margin = leb_max / (2.0 * c_delta * nf) - psi_linf;
        let mut check = BoundCheck::new("hausdorff_dual", Some(i), dh.powi(dim as i32), haus_bound, 0.0, true);
        if dh_low.powi(dim as i32) <= haus_bound {
            check.status = BoundStatus::Holds;
        }
        bounds.push(check.with_hypothesis(margin));

        // Rate in terms of masses; the constraint involves the configured C_PW.
        if q > 1.0 && m > 0.0 {
            let lam_i = lambda1[i].max(lambda2[i]);
            let c1 = q * c_delta * consts.c_grad * pw.c_pw * consts.rho_sup / (2.0 * (q - 1.0));
            let margin = lam_i * m.powf(1.0 / q) - c1 * nf.powi(5) * lambda_l2;
            let arc = (1.0 - c2_haus * lam_i * lam_i / (consts.rho_sup * consts.rho_sup)).clamp(-1.0, 1.0).acos().powi(dim as i32 - 1);
            let bound = q * c1_haus * nf.powi(5) * consts.c_grad * pw.c_pw * lambda_l2 / (4.0 * (q - 1.0) * m.powf(1.0 / q) * arc);
            let mut check = BoundCheck::new("hausdorff_rate", Some(i), dh.powi(dim as i32), bound, 0.0, true);
            if dh_low.powi(dim as i32) <= bound {
                check.status = BoundStatus::Holds;
            }
            bounds.push(check.with_hypothesis(margin));
        } else {
            bounds.push(BoundCheck::not_applicable("hausdorff_rate", Some(i), true));
        }
    }

    // Convex-geometry estimates on each cell and on nested intersections.
    for i in 0..n {
        for (b_mask, other) in [(&masks1[i], &masks2[i]), (&masks2[i], &masks1[i])] {
            convex_geometry_checks(&mut bounds, i, b_mask, other, mu, h);
        }
    }

    // Uniform potential bound; reported against the configured C_PW only.
    let all_nonempty = (0..n).all(|i| p1.lebesgue[i] > 0.0 && p2.lebesgue[i] > 0.0);
    if all_nonempty {
        let ml = p1.lebesgue.iter().cloned().fold(f64::INFINITY, f64::min).max(p2.lebesgue.iter().cloned().fold(f64::INFINITY, f64::min));
        let sum_sq: f64 = hausdorff.iter().map(|d| d.unwrap_or(0.0).powi(2)).sum();
        let d = dim as f64;
        let bound = nf.powi(4) * consts.c_grad * pw.c_pw * d * bd * sum_sq.sqrt() / (2.0 * ml.powf(1.0 - 1.0 / d) * mu.volume().powf(1.0 / d));
        bounds.push(BoundCheck::new("potential_uniform", None, potential_c0, bound, 0.0, false));
    } else {
        bounds.push(BoundCheck::not_applicable("potential_uniform", None, false));
    }
    bounds.push(BoundCheck::new("potential_contraction", None, potential_c0, psi_linf, 1e-12 * (1.0 + psi_linf), true));

    Ok(StabilityReport {
        mu_symmetric_difference: mu_sd,
        lebesgue_symmetric_difference: leb_sd,
        hausdorff,
        psi_l2,
        psi_linf,
        potential_c0,
        lambda_l1,
        lambda_l2,
        constants: *consts,
        pw,
        c_delta,
        bounds,
    })
}

/// Inscribed ball in `A = B cap other` and the set-difference estimate for `A` inside `B`.
fn convex_geometry_checks(bounds: &mut Vec<BoundCheck>, i: usize, b_mask: &[bool], other: &[bool], mu: &GriddedMeasure, h: f64) {
    let dim = mu.dim();
    let vol = mu.pixel_volume();
    let a_mask: Vec<bool> = b_mask.iter().zip(other).map(|(x, y)| *x && *y).collect();
    let leb_a = a_mask.iter().filter(|&&v| v).count() as f64 * vol;
    let leb_b = b_mask.iter().filter(|&&v| v).count() as f64 * vol;
    let (Some(diam_a), Some(diam_b)) = (diameter_of_mask(&a_mask, mu), diameter_of_mask(b_mask, mu)) else {
        bounds.push(BoundCheck::not_applicable("contains_ball", Some(i), true));
        bounds.push(BoundCheck::not_applicable("set_difference", Some(i), true));
        return;
    };
    // Pixel-center diameters are short by up to one pixel diameter.
    let (diam_a, diam_b) = (diam_a + h, diam_b + h);
    let r = inradius_of_mask(&a_mask, mu).unwrap_or(0.0);
    let ball = ball_constant(dim, diam_a) * leb_a;
    // The inscribed radius must reach the bound: measured is the shortfall.
    bounds.push(BoundCheck::new("contains_ball", Some(i), ball - r, 0.0, 2.0 * h, true));

    let dist = directed_hausdorff(b_mask, &a_mask, mu).unwrap_or(0.0);
    let lower = set_difference_lower_bound(dim, (dist - 2.0 * h).max(0.0), leb_a, diam_a, diam_b);
    let mut check = BoundCheck::new("set_difference", Some(i), lower, leb_b - leb_a, 0.0, true);
    check.ratio = if leb_b - leb_a > 0.0 { lower / (leb_b - leb_a) } else { 0.0 };
    bounds.push(check);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_geometry::universal_constants;
    use crate::gridded_measure::{rasterize_cells, Instance};

    fn remark(n: usize) -> (CostModel, SiteSet, GriddedMeasure) {
        let m = CostModel::new(CostFamily::InnerProduct, 1).unwrap();
        let s = SiteSet::new(&(1..=n).map(|i| vec![i as f64 - 0.5]).collect::<Vec<_>>()).unwrap();
        let mu = GriddedMeasure::uniform(vec![0.0], vec![n as f64], vec![1024 * n]).unwrap();
        (m, s, mu)
    }

    fn shifted_dual(n: usize) -> Vec<f64> {
        (1..=n).map(|i| if i == 1 { 0.0 } else { ((i - 1) * (i - 2)) as f64 / 2.0 }).collect()
    }

    fn classical_dual(n: usize) -> Vec<f64> {
        (1..=n).map(|i| (i * (i - 1)) as f64 / 2.0).collect()
    }

    #[test]
    fn ball_volumes() {
        assert_eq!(unit_ball_volume(1), 2.0);
        assert!((unit_ball_volume(2) - PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-14);
    }

    #[test]
    fn shifted_cells_in_one_dimension() {
        let n = 4;
        let (m, s, mu) = remark(n);
        let inst = Instance::new(&m, &s, &mu).unwrap();
        let p1 = rasterize_cells(inst, &classical_dual(n)).unwrap();
        let p2 = rasterize_cells(inst, &shifted_dual(n)).unwrap();
        let sd = symmetric_difference(&p1, &p2, &mu).unwrap();
        assert!((sd.total - 1.5).abs() < 2.0 * n as f64 / (1024.0 * n as f64));
        assert_eq!(symmetric_difference(&p1, &p1, &mu).unwrap().total, 0.0);
        let dh = hausdorff_distance(&p1, &p2, 3, &mu).unwrap();
        assert!((dh - 1.0).abs() <= mu.pixel_diameter());
        assert!(hausdorff_distance(&p1, &p2, 0, &mu).is_err());
        // The exact intervals are [3, 4] and [2, 4].
        let exact = hausdorff_support_function(&m, &s, &classical_dual(n), &shifted_dual(n), 3, &mu, 2).unwrap();
        assert!((exact - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_square() {
        let mu = GriddedMeasure::uniform(vec![0.0, 0.0], vec![2.0, 1.0], vec![256, 128]).unwrap();
        let mut a = vec![false; mu.n_pixels()];
        let mut b = vec![false; mu.n_pixels()];
        for p in 0..mu.n_pixels() {
            let x = mu.center(p);
            a[p] = x[0] < 1.0;
            b[p] = x[0] > 0.5 && x[0] < 1.5;
        }
        let d = hausdorff_of_masks(&a, &b, &mu).unwrap();
        assert!((d - 0.5).abs() <= mu.pixel_diameter());
    }

    #[test]
    fn potential_shift_and_contraction() {
        let m = CostModel::new(CostFamily::QuadraticDistance, 2).unwrap();
        let s = SiteSet::new(&[vec![0.2, 0.2], vec![0.8, 0.4], vec![0.4, 0.9]]).unwrap();
        let mu = GriddedMeasure::uniform(vec![0.0, 0.0], vec![1.0, 1.0], vec![64, 64]).unwrap();
        let psi = [0.01, -0.03, 0.02];
        let shifted: Vec<f64> = psi.iter().map(|v| v + 0.25).collect();
        let d = uniform_potential_distance(&m, &s, &psi, &shifted, &mu).unwrap();
        assert!((d - 0.25).abs() < 1e-12);
        let other = [0.05, -0.01, -0.04];
        let d = uniform_potential_distance(&m, &s, &psi, &other, &mu).unwrap();
        assert!(d <= 0.06 + 1e-15);
    }

    #[test]
    fn support_function_matches_grid() {
        let m = CostModel::new(CostFamily::InnerProduct, 2).unwrap();
        let s = SiteSet::new(&[vec![0.1, 0.2], vec![0.9, 0.1], vec![0.5, 0.8], vec![0.6, 0.5]]).unwrap();
        let mu = GriddedMeasure::uniform(vec![0.0, 0.0], vec![1.0, 1.0], vec![256, 256]).unwrap();
        let inst = Instance::new(&m, &s, &mu).unwrap();
        let psi1 = [0.025, 0.41, 0.445, 0.305];
        let psi2 = [0.045, 0.39, 0.455, 0.3];
        let p1 = rasterize_cells(inst, &psi1).unwrap();
        let p2 = rasterize_cells(inst, &psi2).unwrap();
        for i in 0..4 {
            let grid = hausdorff_distance(&p1, &p2, i, &mu).unwrap();
            let exact = hausdorff_support_function(&m, &s, &psi1, &psi2, i, &mu, 720).unwrap();
            assert!((grid - exact).abs() <= mu.pixel_diameter() + 2.0 * PI * mu.diameter() / 720.0, "{i}: {grid} {exact}");
        }
        let q = CostModel::new(CostFamily::QuadraticDistance, 2).unwrap();
        assert!(hausdorff_support_function(&q, &s, &psi1, &psi2, 0, &mu, 8).is_err());
    }

    #[test]
    fn identical_pairs_measure_zero() {
        let m = CostModel::new(CostFamily::InnerProduct, 2).unwrap();
        let s = SiteSet::new(&[vec![0.1, 0.2], vec![0.9, 0.1], vec![0.5, 0.8]]).unwrap();
        let mu = GriddedMeasure::uniform(vec![0.0, 0.0], vec![1.0, 1.0], vec![64, 64]).unwrap();
        let inst = Instance::new(&m, &s, &mu).unwrap();
        let psi = [0.0, 0.3, 0.2];
        let p = rasterize_cells(inst, &psi).unwrap();
        let consts = universal_constants(&m, &s, &mu).unwrap();
        let pair = PerturbationPair { psi1: &psi, psi2: &psi, lambda1: &p.masses, lambda2: &p.masses, p1: &p, p2: &p };
        let r = evaluate_bounds(&m, &s, &mu, pair, &consts, PwParameters { q: 2.0, c_pw: mu.diameter() / 2.0 }).unwrap();
        assert_eq!(r.mu_symmetric_difference.total, 0.0);
        assert!(r.hausdorff.iter().all(|d| *d == Some(0.0)));
        assert_eq!(r.potential_c0, 0.0);
        assert_eq!(r.violations().count(), 0);
        assert_eq!(r.max_ratio("symmetric_difference"), Some(0.0));
    }

    #[test]
    fn shifted_pair_ratio() {
        let n = 4;
        let (m, s, mu) = remark(n);
        let inst = Instance::new(&m, &s, &mu).unwrap();
        let (psi1, psi2) = (classical_dual(n), shifted_dual(n));
        let p1 = rasterize_cells(inst, &psi1).unwrap();
        let p2 = rasterize_cells(inst, &psi2).unwrap();
        let l1 = vec![0.25; 4];
        let l2 = vec![0.0, 0.25, 0.25, 0.5];
        let consts = universal_constants(&m, &s, &mu).unwrap();
        let pair = PerturbationPair { psi1: &psi1, psi2: &psi2, lambda1: &l1, lambda2: &l2, p1: &p1, p2: &p2 };
        let r = evaluate_bounds(&m, &s, &mu, pair, &consts, PwParameters { q: 2.0, c_pw: 2.0 }).unwrap();
        let ratio = r.max_ratio("symmetric_difference").unwrap();
        assert!((ratio - (n as f64 - 1.0) / (4.0 * n as f64)).abs() < 1e-3);
    }

    #[test]
    fn set_difference_bound_on_nested_squares() {
        // A = [0, 1/2]^2 inside B = [0, 1]^2.
        let mu = GriddedMeasure::uniform(vec![0.0, 0.0], vec![1.0, 1.0], vec![128, 128]).unwrap();
        let b = vec![true; mu.n_pixels()];
        let a: Vec<bool> = (0..mu.n_pixels()).map(|p| mu.center(p).iter().all(|v| *v < 0.5)).collect();
        let dist = directed_hausdorff(&b, &a, &mu).unwrap();
        assert!((dist - 0.5 * 2f64.sqrt()).abs() < 2.0 * mu.pixel_diameter());
        let lower = set_difference_lower_bound(2, dist, 0.25, 0.5 * 2f64.sqrt(), 2f64.sqrt());
        assert!(lower > 0.0 && lower <= 0.75);
    }
}
