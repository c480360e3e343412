//! Gridded source measure, rasterized Laguerre partitions, and the mass map.
//!
//! The box is split into `shape[0] x shape[1] x ...` pixels. Flat pixel indices
//! are row-major with the first coordinate varying fastest, so in 2D the flat
//! index is `iy * nx + ix`.
//!
//! Two mass computations live here. Partition masses count whole pixels by the
//! label at their center. [`g_map`] refines this across cell interfaces, which
//! makes `G` continuous and piecewise smooth in `psi` as the Newton solver needs.
//! In 2D a pixel crossed by an interface is clipped against each cell, so `G`
//! is exact for the piecewise-constant density and its derivative is the face
//! integral. In 1D a linear split is already exact. In higher dimensions a pixel
//! near an interface is split linearly between the two sites, and where several
//! interfaces meet each site gets the product of its pairwise ramps, normalized
//! over the competing sites.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_geometry::{CostModel, ScoreTable, SiteSet};
use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::hull;
use crate::polygon;

/// Pixels per parallel work unit. Fixed so reductions do not depend on the thread count.
pub const CHUNK: usize = 4096;

const DENSITY_MAGIC: &[u8; 4] = b"LGD1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriddedMeasure {
    lower: Vec<f64>,
    upper: Vec<f64>,
    shape: Vec<usize>,
    spacing: Vec<f64>,
    /// Normalized density value at each pixel center.
    density: Vec<f64>,
    pixel_volume: f64,
}

impl GriddedMeasure {
    /// Builds a measure from raw per-pixel density samples and renormalizes it.
    pub fn from_raw(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>, raw: Vec<f64>) -> Result<Self> {
        let dim = lower.len();
        if dim == 0 || upper.len() != dim || shape.len() != dim {
            return Err(Error::InvalidInput("box bounds and shape must share a positive dimension".into()));
        }
        for k in 0..dim {
            if !(lower[k].is_finite() && upper[k].is_finite() && upper[k] > lower[k]) {
                return Err(Error::InvalidInput(format!("degenerate box along axis {k}")));
            }
            if shape[k] == 0 {
                return Err(Error::InvalidInput(format!("zero pixels along axis {k}")));
            }
        }
        let n: usize = shape.iter().product();
        if raw.len() != n {
            return Err(Error::SizeMismatch { expected: n, got: raw.len() });
        }
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("density must be finite and nonnegative".into()));
        }
        let spacing: Vec<f64> = (0..dim).map(|k| (upper[k] - lower[k]) / shape[k] as f64).collect();
        let pixel_volume: f64 = spacing.iter().product();
        let total = sum_chunked(&raw) * pixel_volume;
        if total <= 0.0 {
            return Err(Error::InvalidInput("density has zero mass".into()));
        }
        let density = raw.into_iter().map(|v| v / total).collect();
        Ok(Self { lower, upper, shape, spacing, density, pixel_volume })
    }

    pub fn uniform(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::from_raw(lower, upper, shape, vec![1.0; n])
    }

    /// Density sampled from `f` at pixel centers.
    pub fn from_fn(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>, f: impl Fn(&[f64]) -> f64 + Sync) -> Result<Self> {
        let n = shape.iter().product();
        let probe = Self::from_raw(lower.clone(), upper.clone(), shape.clone(), vec![1.0; n])?;
        let raw = probe.map_centers(f);
        Self::from_raw(lower, upper, shape, raw)
    }

    /// Product Gaussian truncated to the box.
    pub fn gaussian(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>, mean: &[f64], sigma: &[f64]) -> Result<Self> {
        if mean.len() != lower.len() || sigma.len() != lower.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: mean.len().min(sigma.len()) });
        }
        if sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidInput("gaussian widths must be positive".into()));
        }
        let (m, s) = (mean.to_vec(), sigma.to_vec());
        Self::from_fn(lower, upper, shape, move |x| {
            let e: f64 = x.iter().zip(&m).zip(&s).map(|((xi, mi), si)| ((xi - mi) / si).powi(2)).sum();
            (-0.5 * e).exp()
        })
    }

    /// Reads a density file: magic `LGD1`, `u32` dimension, then per axis a
    /// `u64` pixel count and `f64` lower/upper bounds, then the samples as
    /// `f64` in flat pixel order. Everything is little-endian.
    pub fn read_density(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DENSITY_MAGIC {
            return Err(Error::InvalidInput("not a density file".into()));
        }
        let dim = read_u32(&mut r)? as usize;
        if dim == 0 || dim > 8 {
            return Err(Error::InvalidInput(format!("unsupported density dimension {dim}")));
        }
        let (mut shape, mut lower, mut upper) = (vec![], vec![], vec![]);
        for _ in 0..dim {
            shape.push(read_u64(&mut r)? as usize);
            lower.push(read_f64(&mut r)?);
            upper.push(read_f64(&mut r)?);
        }
        let n: usize = shape.iter().product();
        let mut raw = Vec::with_capacity(n);
        for _ in 0..n {
            raw.push(read_f64(&mut r)?);
        }
        Self::from_raw(lower, upper, shape, raw)
    }

    pub fn read_density_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_density(std::io::BufReader::new(f))
    }

    /// Writes the normalized density in the format read by [`Self::read_density`].
    pub fn write_density(&self, mut w: impl Write) -> Result<()> {
        w.write_all(DENSITY_MAGIC)?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        for k in 0..self.dim() {
            w.write_all(&(self.shape[k] as u64).to_le_bytes())?;
            w.write_all(&self.lower[k].to_le_bytes())?;
            w.write_all(&self.upper[k].to_le_bytes())?;
        }
        for v in &self.density {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }
    pub fn density(&self) -> &[f64] {
        &self.density
    }
    pub fn pixel_volume(&self) -> f64 {
        self.pixel_volume
    }
    pub fn n_pixels(&self) -> usize {
        self.density.len()
    }

    pub fn pixel_mass(&self, p: usize) -> f64 {
        self.density[p] * self.pixel_volume
    }

    pub fn max_pixel_mass(&self) -> f64 {
        self.rho_sup() * self.pixel_volume
    }

    /// Masses below this cannot be certified by rasterization.
    pub fn empty_cell_threshold(&self) -> f64 {
        3.0 * self.max_pixel_mass()
    }

    pub fn rho_sup(&self) -> f64 {
        self.density.iter().cloned().fold(0.0, f64::max)
    }

    /// Length of a pixel's diagonal.
    pub fn pixel_diameter(&self) -> f64 {
        self.spacing.iter().map(|h| h * h).sum::<f64>().sqrt()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.upper[k] - self.lower[k]).product()
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|k| (self.upper[k] - self.lower[k]).powi(2)).sum::<f64>().sqrt()
    }

    /// Surface measure of the box boundary; two points in 1D.
    pub fn boundary_area(&self) -> f64 {
        let n = self.dim();
        let sides: Vec<f64> = (0..n).map(|k| self.upper[k] - self.lower[k]).collect();
        (0..n)
            .map(|k| 2.0 * sides.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, s)| s).product::<f64>())
            .sum()
    }

    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| (0..n).map(|k| if mask >> k & 1 == 1 { self.upper[k] } else { self.lower[k] }).collect())
            .collect()
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: self.dim() });
        }
        Ok(())
    }

    pub fn multi_index(&self, mut p: usize) -> Vec<usize> {
        self.shape
            .iter()
            .map(|&n| {
                let i = p % n;
                p /= n;
                i
            })
            .collect()
    }

    pub fn center_into(&self, p: usize, x: &mut [f64]) {
        let mut rem = p;
        for k in 0..self.dim() {
            let i = rem % self.shape[k];
            rem /= self.shape[k];
            x[k] = self.lower[k] + (i as f64 + 0.5) * self.spacing[k];
        }
    }

    pub fn center(&self, p: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.center_into(p, &mut x);
        x
    }

    /// Calls `f(p, x)` for each pixel `p` in `range` with its center `x`.
    pub(crate) fn for_each_center(&self, range: Range<usize>, mut f: impl FnMut(usize, &[f64])) {
        let dim = self.dim();
        let mut idx = self.multi_index(range.start);
        let mut x: Vec<f64> = (0..dim).map(|k| self.lower[k] + (idx[k] as f64 + 0.5) * self.spacing[k]).collect();
        for p in range {
            f(p, &x);
            for k in 0..dim {
                idx[k] += 1;
                if idx[k] < self.shape[k] {
                    x[k] = self.lower[k] + (idx[k] as f64 + 0.5) * self.spacing[k];
                    break;
                }
                idx[k] = 0;
                x[k] = self.lower[k] + 0.5 * self.spacing[k];
            }
        }
    }

    /// Evaluates `f` at every pixel center.
    pub fn map_centers(&self, f: impl Fn(&[f64]) -> f64 + Sync) -> Vec<f64> {
        let parts = chunked(self.n_pixels(), |r| {
            let mut out = Vec::with_capacity(r.len());
            self.for_each_center(r, |_, x| out.push(f(x)));
            out
        });
        parts.concat()
    }

    /// Two grids are interchangeable when box and shape coincide.
    pub fn same_grid(&self, other: &GriddedMeasure) -> bool {
        self.shape == other.shape && self.lower == other.lower && self.upper == other.upper
    }

    pub fn total_mass(&self) -> f64 {
        sum_chunked(&self.density) * self.pixel_volume
    }
}

/// Runs `f` on consecutive pixel ranges of length [`CHUNK`] and returns the
/// results in range order, whatever the thread count.
pub(crate) fn chunked<T: Send>(n: usize, f: impl Fn(Range<usize>) -> T + Sync) -> Vec<T> {
    let n_chunks = n.div_ceil(CHUNK);
    (0..n_chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(n)))
        .collect()
}

fn sum_chunked(v: &[f64]) -> f64 {
    chunked(v.len(), |r| v[r].iter().sum::<f64>()).into_iter().sum()
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// A cost, a site set and a source measure that agree on dimension.
#[derive(Debug, Clone, Copy)]
pub struct Instance<'a> {
    pub cost: &'a CostModel,
    pub sites: &'a SiteSet,
    pub measure: &'a GriddedMeasure,
}

impl<'a> Instance<'a> {
    pub fn new(cost: &'a CostModel, sites: &'a SiteSet, measure: &'a GriddedMeasure) -> Result<Self> {
        if sites.dim() != cost.dim {
            return Err(Error::DimensionMismatch { expected: cost.dim, got: sites.dim() });
        }
        measure.check_dim(cost.dim)?;
        Ok(Self { cost, sites, measure })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn scores(&self, psi: &[f64]) -> Result<ScoreTable> {
        ScoreTable::new(self.cost, self.sites, psi)
    }
}

/// Per-pixel labels together with the per-cell masses they induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPartition {
    pub labels: Vec<u32>,
    /// `mu`-mass of each label set.
    pub masses: Vec<f64>,
    /// Lebesgue volume of each label set.
    pub lebesgue: Vec<f64>,
    shape: Vec<usize>,
}

impl CellPartition {
    pub fn n_sites(&self) -> usize {
        self.masses.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn mass_of(&self, i: usize) -> Result<f64> {
        self.masses.get(i).copied().ok_or(Error::IndexOutOfRange { index: i, n: self.n_sites() })
    }

    /// Whether cell `i` carries more mass than rasterization can resolve.
    pub fn is_resolved(&self, i: usize, mu: &GriddedMeasure) -> bool {
        self.masses[i] >= mu.empty_cell_threshold()
    }

    pub fn mask(&self, i: usize) -> Vec<bool> {
        self.labels.iter().map(|&l| l as usize == i).collect()
    }

    fn check_grid(&self, mu: &GriddedMeasure) -> Result<()> {
        if self.shape != mu.shape() {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Labels as row-major little-endian `u16`, for external viewers.
    pub fn write_labels_u16(&self, mut w: impl Write) -> Result<()> {
        if self.n_sites() > u16::MAX as usize + 1 {
            return Err(Error::Unsupported("more than 65536 labels".into()));
        }
        let mut buf = Vec::with_capacity(2 * self.labels.len());
        for &l in &self.labels {
            buf.extend_from_slice(&(l as u16).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

/// Labels each pixel with the c*-transform argmax at its center.
pub fn rasterize_cells(inst: Instance<'_>, psi: &[f64]) -> Result<CellPartition> {
    let table = inst.scores(psi)?;
    let mu = inst.measure;
    let n = inst.n_sites();
    let parts = chunked(mu.n_pixels(), |r| {
        let mut labels = Vec::with_capacity(r.len());
        let mut masses = vec![0.0; n];
        let mut counts = vec![0usize; n];
        mu.for_each_center(r, |p, x| {
            let (a, _) = table.argmax(x);
            labels.push(a as u32);
            masses[a] += mu.density[p];
            counts[a] += 1;
        });
        (labels, masses, counts)
    });
    let mut labels = Vec::with_capacity(mu.n_pixels());
    let mut masses = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (l, m, c) in parts {
        labels.extend_from_slice(&l);
        for i in 0..n {
            masses[i] += m[i];
            counts[i] += c[i];
        }
    }
    let vol = mu.pixel_volume;
    Ok(CellPartition {
        labels,
        masses: masses.into_iter().map(|m| m * vol).collect(),
        lebesgue: counts.into_iter().map(|c| c as f64 * vol).collect(),
        shape: mu.shape.clone(),
    })
}

/// The mass map `G(psi)` with interface-aware quadrature.
pub fn g_map(inst: Instance<'_>, psi: &[f64]) -> Result<Vec<f64>> {
    Ok(mass_pass(inst, psi, false)?.0)
}

/// `G(psi)` together with its exact derivative, `jac[(j, i)] = dG_j / dpsi_i`.
pub fn mass_and_jacobian(inst: Instance<'_>, psi: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (g, jac) = mass_pass(inst, psi, true)?;
    Ok((g, jac.expect("requested")))
}

fn mass_pass(inst: Instance<'_>, psi: &[f64], want_jac: bool) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
    let table = inst.scores(psi)?;
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("dual vector has non-finite entries".into()));
    }
    let mu = inst.measure;
    let n = inst.n_sites();
    // Ramp width along each pair's interface normal, and the site gaps.
    let mut width = vec![1.0; n * n];
    let mut gap = vec![1.0; n * n];
    let mut reach: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let g = table.site_gap(a, b);
            let (ya, yb) = (table.site(a), table.site(b));
            let w: f64 = (0..mu.dim()).map(|k| ((ya[k] - yb[k]) / g).abs() * mu.spacing[k]).sum();
            width[a * n + b] = w;
            gap[a * n + b] = g;
            reach = reach.max(w * g);
        }
    }
    let half = [0.5 * mu.spacing[0], 0.5 * mu.spacing.get(1).copied().unwrap_or(0.0)];
    let parts = chunked(mu.n_pixels(), |r| {
        let mut masses = vec![0.0; n];
        let mut jac = if want_jac { vec![0.0; n * n] } else { Vec::new() };
        let mut scores = vec![0.0; n];
        let mut cand: Vec<usize> = Vec::with_capacity(n);
        let mut u: Vec<f64> = Vec::with_capacity(n);
        let mut du: Vec<f64> = Vec::with_capacity(n * n);
        mu.for_each_center(r, |p, x| {
            let rho = mu.density[p];
            let mut a = 0;
            for i in 0..n {
                scores[i] = table.score(x, i);
                if scores[i] > scores[a] {
                    a = i;
                }
            }
            cand.clear();
            cand.extend((0..n).filter(|&j| j == a || scores[a] - scores[j] < reach));
            if cand.len() == 1 {
                masses[a] += rho;
                return;
            }
            if mu.dim() == 2 {
                clip_pixel(&table, &cand, &scores, &gap, n, half, rho, &mut masses, want_jac.then_some(&mut jac[..]));
                return;
            }
            // Weight of site i: product over rivals j of ramp(d_ij), where
            // d_ij is the signed distance to the (i, j) interface.
            let m = cand.len();
            u.clear();
            du.clear();
            du.resize(m * m, 0.0);
            for (ci, &i) in cand.iter().enumerate() {
                let mut ui = 1.0;
                let mut log_grad = vec![0.0; if want_jac { m } else { 0 }];
                // A factor exactly at zero still has a one-sided derivative.
                let mut at_zero: Option<(usize, f64)> = None;
                let mut dead = false;
                for (cj, &j) in cand.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let gw = gap[i * n + j] * width[i * n + j];
                    let t = 0.5 + (scores[i] - scores[j]) / gw;
                    // Ramps are half-open, oriented by site index, so an
                    // interface on a pixel edge is counted by one pixel only.
                    let live = if i < j { t < 1.0 } else { t > 0.0 };
                    if t < 0.0 || (t == 0.0 && (!live || at_zero.is_some())) {
                        dead = true;
                        break;
                    }
                    if t == 0.0 {
                        at_zero = Some((cj, gw));
                    } else if t < 1.0 || (t == 1.0 && live) {
                        if t < 1.0 {
                            ui *= t;
                        }
                        if want_jac {
                            // d t / d psi_i = -1 / gw and d t / d psi_j = 1 / gw.
                            log_grad[ci] -= 1.0 / (gw * t);
                            log_grad[cj] += 1.0 / (gw * t);
                        }
                    }
                }
                if dead {
                    u.push(0.0);
                    continue;
                }
                match at_zero {
                    None => {
                        u.push(ui);
                        if want_jac {
                            for ck in 0..m {
                                du[ci * m + ck] = ui * log_grad[ck];
                            }
                        }
                    }
                    Some((cj, gw)) => {
                        u.push(0.0);
                        if want_jac {
                            du[ci * m + ci] = -ui / gw;
                            du[ci * m + cj] = ui / gw;
                        }
                    }
                }
            }
            let total: f64 = u.iter().sum();
            for ci in 0..m {
                masses[cand[ci]] += rho * u[ci] / total;
            }
            if want_jac {
                for ck in 0..m {
                    let dtotal: f64 = (0..m).map(|ci| du[ci * m + ck]).sum();
                    for ci in 0..m {
                        let d = (du[ci * m + ck] - u[ci] / total * dtotal) / total;
                        jac[cand[ci] * n + cand[ck]] += rho * d;
                    }
                }
            }
        });
        (masses, jac)
    });
    let vol = mu.pixel_volume;
    let mut masses = vec![0.0; n];
    let mut jac = if want_jac { Some(DMatrix::zeros(n, n)) } else { None };
    for (m, part) in parts {
        for i in 0..n {
            masses[i] += m[i];
        }
        if let Some(j) = jac.as_mut() {
            for a in 0..n {
                for b in 0..n {
                    j[(a, b)] += part[a * n + b];
                }
            }
        }
    }
    for m in masses.iter_mut() {
        *m *= vol;
    }
    if let Some(j) = jac.as_mut() {
        *j *= vol;
    }
    Ok((masses, jac))
}

/// Splits a 2D pixel exactly among the candidate cells. `scores` are taken at
/// the pixel center, which is the origin of the local coordinates. Mass goes
/// in as a fraction of the pixel; `dG_i / dpsi_j` is the length of the shared
/// edge over `|y_i - y_j|`, relative to the pixel area.
#[allow(clippy::too_many_arguments)]
fn clip_pixel(
    table: &ScoreTable,
    cand: &[usize],
    scores: &[f64],
    gap: &[f64],
    n: usize,
    half: [f64; 2],
    rho: f64,
    masses: &mut [f64],
    mut jac: Option<&mut [f64]>,
) {
    let outline: Vec<([f64; 2], u32)> = polygon::rectangle([-half[0], -half[1]], half).into_iter().map(|p| (p, polygon::OUTLINE)).collect();
    let pixel_area = 4.0 * half[0] * half[1];
    let mut pieces: Vec<(usize, f64)> = Vec::with_capacity(cand.len());
    for &i in cand {
        let (yi0, yi1) = (table.site(i)[0], table.site(i)[1]);
        let mut poly = outline.clone();
        for &j in cand {
            if j == i || poly.is_empty() {
                continue;
            }
            // s_i >= s_j  <=>  <x, y_j - y_i> <= s_i(0) - s_j(0).
            let yj = table.site(j);
            poly = polygon::clip_labelled(&poly, [yj[0] - yi0, yj[1] - yi1], scores[i] - scores[j], j as u32);
        }
        if poly.len() < 3 {
            continue;
        }
        let pts: Vec<[f64; 2]> = poly.iter().map(|v| v.0).collect();
        pieces.push((i, polygon::area(&pts)));
        if let Some(jac) = jac.as_deref_mut() {
            polygon::labelled_lengths(&poly, |j, len| {
                let w = rho * len / (gap[i * n + j as usize] * pixel_area);
                jac[i * n + j as usize] += w;
                jac[i * n + i] -= w;
            });
        }
    }
    let total: f64 = pieces.iter().map(|p| p.1).sum();
    for (i, a) in pieces {
        masses[i] += rho * a / total;
    }
}

/// `mu(Lag_i(psi_1) cap Lag_j(psi_2))` from two label arrays.
pub fn intersection_mass(p1: &CellPartition, p2: &CellPartition, i: usize, j: usize, mu: &GriddedMeasure) -> Result<f64> {
    check_pair(p1, p2, mu)?;
    let n = p1.n_sites();
    if i >= n || j >= p2.n_sites() {
        return Err(Error::IndexOutOfRange { index: i.max(j), n });
    }
    let parts = chunked(mu.n_pixels(), |r| {
        r.filter(|&p| p1.labels[p] as usize == i && p2.labels[p] as usize == j)
            .map(|p| mu.density[p])
            .sum::<f64>()
    });
    Ok(parts.into_iter().sum::<f64>() * mu.pixel_volume)
}

/// All pairwise intersection masses in one pass, row `i` for `p1`, column `j` for `p2`.
pub fn intersection_matrix(p1: &CellPartition, p2: &CellPartition, mu: &GriddedMeasure) -> Result<DMatrix<f64>> {
    check_pair(p1, p2, mu)?;
    let (n1, n2) = (p1.n_sites(), p2.n_sites());
    let parts = chunked(mu.n_pixels(), |r| {
        let mut m = vec![0.0; n1 * n2];
        for p in r {
            m[p1.labels[p] as usize * n2 + p2.labels[p] as usize] += mu.density[p];
        }
        m
    });
    let mut out = DMatrix::zeros(n1, n2);
    for part in parts {
        for i in 0..n1 {
            for j in 0..n2 {
                out[(i, j)] += part[i * n2 + j];
            }
        }
    }
    Ok(out * mu.pixel_volume)
}

fn check_pair(p1: &CellPartition, p2: &CellPartition, mu: &GriddedMeasure) -> Result<()> {
    p1.check_grid(mu)?;
    p2.check_grid(mu)?;
    Ok(())
}

/// Inclusive per-axis index bounds of the pixels with `mask` set.
pub(crate) fn bounding_box(mask: &[bool], mu: &GriddedMeasure) -> Option<(Vec<usize>, Vec<usize>)> {
    let dim = mu.dim();
    let mut lo = vec![usize::MAX; dim];
    let mut hi = vec![0usize; dim];
    let mut any = false;
    let mut idx = vec![0usize; dim];
    for &m in mask.iter() {
        if m {
            any = true;
            for k in 0..dim {
                lo[k] = lo[k].min(idx[k]);
                hi[k] = hi[k].max(idx[k]);
            }
        }
        for k in 0..dim {
            idx[k] += 1;
            if idx[k] < mu.shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    any.then_some((lo, hi))
}

/// A rectangular window of the grid, possibly extending past its edges.
pub(crate) struct Window {
    /// Signed index of the window's first pixel along each axis.
    pub origin: Vec<isize>,
    pub shape: Vec<usize>,
}

impl Window {
    pub fn around(lo: &[usize], hi: &[usize], pad: usize, mu: &GriddedMeasure, clip: bool) -> Self {
        let dim = lo.len();
        let mut origin = Vec::with_capacity(dim);
        let mut shape = Vec::with_capacity(dim);
        for k in 0..dim {
            let mut a = lo[k] as isize - pad as isize;
            let mut b = hi[k] as isize + pad as isize;
            if clip {
                a = a.max(0);
                b = b.min(mu.shape[k] as isize - 1);
            }
            origin.push(a);
            shape.push((b - a + 1) as usize);
        }
        Self { origin, shape }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Grid pixel for local index `q`, or `None` outside the grid.
    pub fn global(&self, mut q: usize, mu: &GriddedMeasure) -> Option<usize> {
        let mut p = 0usize;
        let mut stride = 1usize;
        for k in 0..self.shape.len() {
            let i = self.origin[k] + (q % self.shape[k]) as isize;
            q /= self.shape[k];
            if i < 0 || i >= mu.shape[k] as isize {
                return None;
            }
            p += i as usize * stride;
            stride *= mu.shape[k];
        }
        Some(p)
    }

    pub fn gather(&self, mu: &GriddedMeasure, f: impl Fn(Option<usize>) -> bool) -> Vec<bool> {
        (0..self.len()).map(|q| f(self.global(q, mu))).collect()
    }
}

fn cell_mask_checked(p: &CellPartition, i: usize, mu: &GriddedMeasure) -> Result<Vec<bool>> {
    p.check_grid(mu)?;
    if i >= p.n_sites() {
        return Err(Error::IndexOutOfRange { index: i, n: p.n_sites() });
    }
    if p.lebesgue[i] == 0.0 {
        return Err(Error::EmptyCell(i));
    }
    Ok(p.mask(i))
}

/// Radius of the largest ball inside cell `i`, measured with a distance
/// transform of the complement. The box exterior counts as complement and the
/// true boundary is taken halfway between pixel centers.
pub fn inradius(p: &CellPartition, i: usize, mu: &GriddedMeasure) -> Result<f64> {
    let mask = cell_mask_checked(p, i, mu)?;
    inradius_of_mask(&mask, mu).ok_or(Error::EmptyCell(i))
}

pub(crate) fn inradius_of_mask(mask: &[bool], mu: &GriddedMeasure) -> Option<f64> {
    let (lo, hi) = bounding_box(mask, mu)?;
    let win = Window::around(&lo, &hi, 1, mu, false);
    let outside = win.gather(mu, |g| g.is_none_or(|p| !mask[p]));
    let d2 = squared_edt(&outside, &win.shape, &mu.spacing);
    let best = (0..win.len()).filter(|&q| !outside[q]).map(|q| d2[q]).fold(0.0, f64::max);
    Some((best.sqrt() - 0.5 * mu.min_spacing()).max(0.0))
}

/// Diameter of cell `i` from its pixel centers. Uses rotating calipers on
/// the convex hull in 2D and a scan of boundary pixels otherwise.
pub fn diameter(p: &CellPartition, i: usize, mu: &GriddedMeasure) -> Result<f64> {
    let mask = cell_mask_checked(p, i, mu)?;
    diameter_of_mask(&mask, mu).ok_or(Error::EmptyCell(i))
}

pub(crate) fn diameter_of_mask(mask: &[bool], mu: &GriddedMeasure) -> Option<f64> {
    let dim = mu.dim();
    let pts = boundary_points(mask, mu);
    if pts.is_empty() {
        return None;
    }
    match dim {
        2 => {
            let planar: Vec<[f64; 2]> = pts.iter().map(|x| [x[0], x[1]]).collect();
            Some(hull::diameter(&planar))
        }
        _ => {
            let mut best: f64 = 0.0;
            for a in &pts {
                for b in &pts {
                    best = best.max(crate::cost_geometry::dist(a, b));
                }
            }
            Some(best)
        }
    }
}

/// Centers of masked pixels having an unmasked or out-of-grid neighbor.
fn boundary_points(mask: &[bool], mu: &GriddedMeasure) -> Vec<Vec<f64>> {
    let dim = mu.dim();
    let mut strides = vec![1usize; dim];
    for k in 1..dim {
        strides[k] = strides[k - 1] * mu.shape[k - 1];
    }
    let mut out = Vec::new();
    mu.for_each_center(0..mu.n_pixels(), |p, x| {
        if !mask[p] {
            return;
        }
        let mut rem = p;
        let mut edge = false;
        for k in 0..dim {
            let i = rem % mu.shape[k];
            rem /= mu.shape[k];
            if i == 0 || i + 1 == mu.shape[k] || !mask[p - strides[k]] || !mask[p + strides[k]] {
                edge = true;
                break;
            }
        }
        if edge {
            out.push(x.to_vec());
        }
    });
    out
}
