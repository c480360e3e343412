//! Cost families, target sites, dual vectors and the c*-transform.
//!
//! Both supported costs have `x`-gradients whose pairwise differences are
//! constant in `x`. After dropping a term common to every site, the quantity
//! `-c(x, y_i) - psi_i` is the affine score `<x, y_i> - beta_i`, so the
//! argmax defining a Laguerre cell is a comparison of affine functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridded_measure::GriddedMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFamily {
    /// `c(x, y) = -<x, y>`
    InnerProduct,
    /// `c(x, y) = |x - y|^2 / 2`
    QuadraticDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub family: CostFamily,
    pub dim: usize,
}

impl CostModel {
    pub fn new(family: CostFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        Ok(Self { family, dim })
    }

    /// Gradient of `c(., y)` at `x`, written into `out`.
    pub fn grad_x(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = match self.family {
                CostFamily::InnerProduct => -y[k],
                CostFamily::QuadraticDistance => x[k] - y[k],
            };
        }
    }
}

/// A finite set of distinct target points, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSet {
    dim: usize,
    coords: Vec<f64>,
}

impl SiteSet {
    pub fn new(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points
            .first()
            .map(|p| p.len())
            .ok_or(Error::TooFewSites { needed: 1, got: 0 })?;
        if dim == 0 {
            return Err(Error::InvalidInput("sites must have positive dimension".into()));
        }
        let mut coords = Vec::with_capacity(dim * points.len());
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("site coordinates must be finite".into()));
            }
            coords.extend_from_slice(p);
        }
        let set = Self { dim, coords };
        for i in 0..set.len() {
            for j in (i + 1)..set.len() {
                if set.point(i) == set.point(j) {
                    return Err(Error::CoincidentSites(i, j));
                }
            }
        }
        Ok(set)
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::InvalidInput("flat site array does not match dimension".into()));
        }
        let points: Vec<Vec<f64>> = coords.chunks(dim).map(|c| c.to_vec()).collect();
        Self::new(&points)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        dist(self.point(i), self.point(j))
    }

    /// Smallest pairwise distance; `None` for fewer than two sites.
    pub fn min_pairwise_distance(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let d = self.distance(i, j);
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        best
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.coords.chunks(self.dim).map(|c| c.to_vec()).collect()
    }
}

/// Dual vector `psi`, one entry per site. Equivalent up to adding constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DualVector {
    pub values: Vec<f64>,
}

impl DualVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Representative with zero sum.
    pub fn canonical(&self) -> Self {
        let mut v = self.values.clone();
        canonicalize(&mut v);
        Self { values: v }
    }

    pub fn shifted(&self, r: f64) -> Self {
        Self { values: self.values.iter().map(|v| v + r).collect() }
    }

    /// Sup-norm distance between the classes of `self` and `other` modulo constants.
    pub fn dist_mod_constants(&self, other: &DualVector) -> f64 {
        let d: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (hi - lo)
    }
}

impl std::ops::Deref for DualVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Subtract the mean in place.
pub fn canonicalize(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

/// Constants entering the stability bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniversalConstants {
    pub eps_tw: f64,
    pub c_grad: f64,
    pub c_exp: f64,
    pub c_cond: f64,
    pub c_det: f64,
    pub bd_area: f64,
    pub rho_sup: f64,
}

pub fn cost_value(model: &CostModel, sites: &SiteSet, x: &[f64], i: usize) -> Result<f64> {
    check_dims(model, sites)?;
    if i >= sites.len() {
        return Err(Error::IndexOutOfRange { index: i, n: sites.len() });
    }
    if x.len() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: x.len() });
    }
    let y = sites.point(i);
    Ok(match model.family {
        CostFamily::InnerProduct => -dot(x, y),
        CostFamily::QuadraticDistance => 0.5 * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
    })
}

/// Affine form of `x -> -c(x, y_i) - psi_i`, shifted by a site-independent term.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub(crate) dim: usize,
    pub(crate) dirs: Vec<f64>,
    pub(crate) offsets: Vec<f64>,
    pub(crate) quadratic: bool,
}

impl ScoreTable {
    pub fn new(model: &CostModel, sites: &SiteSet, psi: &[f64]) -> Result<Self> {
        check_dims(model, sites)?;
        if psi.len() != sites.len() {
            return Err(Error::SizeMismatch { expected: sites.len(), got: psi.len() });
        }
        let quadratic = model.family == CostFamily::QuadraticDistance;
        let offsets = (0..sites.len())
            .map(|i| {
                let y = sites.point(i);
                if quadratic {
                    psi[i] + 0.5 * dot(y, y)
                } else {
                    psi[i]
                }
            })
            .collect();
        Ok(Self { dim: model.dim, dirs: sites.coords.clone(), offsets, quadratic })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    #[inline]
    pub fn score(&self, x: &[f64], i: usize) -> f64 {
        let y = &self.dirs[i * self.dim..(i + 1) * self.dim];
        let mut s = -self.offsets[i];
        for k in 0..self.dim {
            s += x[k] * y[k];
        }
        s
    }

    /// Winner and value of the max score; smallest index wins ties.
    #[inline]
    pub fn argmax(&self, x: &[f64]) -> (usize, f64) {
        let mut best = 0;
        let mut best_s = self.score(x, 0);
        for i in 1..self.len() {
            let s = self.score(x, i);
            if s > best_s {
                best = i;
                best_s = s;
            }
        }
        (best, best_s)
    }

    /// Winner and runner-up with their scores.
    #[inline]
    pub fn top_two(&self, x: &[f64]) -> (usize, f64, usize, f64) {
        let (mut a, mut sa) = (0usize, self.score(x, 0));
        let (mut b, mut sb) = (usize::MAX, f64::NEG_INFINITY);
        for i in 1..self.len() {
            let s = self.score(x, i);
            if s > sa {
                b = a;
                sb = sa;
                a = i;
                sa = s;
            } else if s > sb {
                b = i;
                sb = s;
            }
        }
        (a, sa, b, sb)
    }

    /// Term removed from every score; add it back to recover the transform value.
    #[inline]
    pub fn common_term(&self, x: &[f64]) -> f64 {
        if self.quadratic {
            -0.5 * dot(x, x)
        } else {
            0.0
        }
    }

    /// `offset_i - offset_j`: the interface of `i` and `j` is `<x, y_i - y_j> = offset_i - offset_j`.
    pub fn offsets_diff(&self, i: usize, j: usize) -> f64 {
        self.offsets[i] - self.offsets[j]
    }

    pub fn site_gap(&self, i: usize, j: usize) -> f64 {
        let d = self.dim;
        dist(&self.dirs[i * d..(i + 1) * d], &self.dirs[j * d..(j + 1) * d])
    }

    pub fn site(&self, i: usize) -> &[f64] {
        &self.dirs[i * self.dim..(i + 1) * self.dim]
    }
}

/// `(psi^{c*}(x), winning index)` with ties going to the smallest index.
pub fn c_star_transform(model: &CostModel, sites: &SiteSet, psi: &[f64], x: &[f64]) -> Result<(f64, usize)> {
    if x.len() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: x.len() });
    }
    check_dims(model, sites)?;
    if psi.len() != sites.len() {
        return Err(Error::SizeMismatch { expected: sites.len(), got: psi.len() });
    }
    // Direct evaluation keeps exact ties exact.
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..sites.len() {
        let v = -cost_value(model, sites, x, i)? - psi[i];
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    Ok((best_v, best))
}

/// `psi^{c*}` sampled at every pixel center.
pub fn c_star_on_grid(model: &CostModel, sites: &SiteSet, psi: &[f64], mu: &GriddedMeasure) -> Result<Vec<f64>> {
    let table = ScoreTable::new(model, sites, psi)?;
    mu.check_dim(model.dim)?;
    Ok(mu.map_centers(|x| table.argmax(x).1 + table.common_term(x)))
}

/// Coordinate-wise sup over masked pixel centers of `-c(x, y_i) - phi(x)`.
pub fn pseudo_c_transform(
    model: &CostModel,
    sites: &SiteSet,
    phi: &[f64],
    mu: &GriddedMeasure,
    mask: &[bool],
) -> Result<DualVector> {
    check_dims(model, sites)?;
    mu.check_dim(model.dim)?;
    let n_pix = mu.n_pixels();
    if phi.len() != n_pix {
        return Err(Error::SizeMismatch { expected: n_pix, got: phi.len() });
    }
    if mask.len() != n_pix {
        return Err(Error::SizeMismatch { expected: n_pix, got: mask.len() });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let mut out = vec![f64::NEG_INFINITY; sites.len()];
    let mut x = vec![0.0; model.dim];
    for p in 0..n_pix {
        if !mask[p] {
            continue;
        }
        mu.center_into(p, &mut x);
        for (i, o) in out.iter_mut().enumerate() {
            let v = -cost_value(model, sites, &x, i)? - phi[p];
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(DualVector::new(out))
}

pub fn universal_constants(model: &CostModel, sites: &SiteSet, mu: &GriddedMeasure) -> Result<UniversalConstants> {
    check_dims(model, sites)?;
    mu.check_dim(model.dim)?;
    if sites.len() < 2 {
        return Err(Error::TooFewSites { needed: 2, got: sites.len() });
    }
    // Gradient differences are +-(y_j - y_i) for both families, so eps_tw is exact.
    let eps_tw = sites.min_pairwise_distance().unwrap_or(0.0);
    if eps_tw <= 0.0 {
        return Err(Error::InvalidInput("sites must be pairwise distinct".into()));
    }
    let c_grad = match model.family {
        CostFamily::InnerProduct => (0..sites.len()).map(|i| norm(sites.point(i))).fold(0.0, f64::max),
        CostFamily::QuadraticDistance => {
            // |x - y| is convex in x, so its max over the box sits at a corner.
            let mut best: f64 = 0.0;
            for corner in mu.corners() {
                for i in 0..sites.len() {
                    best = best.max(dist(&corner, sites.point(i)));
                }
            }
            best
        }
    };
    Ok(UniversalConstants {
        eps_tw,
        c_grad,
        c_exp: 1.0,
        c_cond: 1.0,
        c_det: 1.0,
        bd_area: mu.boundary_area(),
        rho_sup: mu.rho_sup(),
    })
}

fn check_dims(model: &CostModel, sites: &SiteSet) -> Result<()> {
    if sites.dim() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: sites.dim() });
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
