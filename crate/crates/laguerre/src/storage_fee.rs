//! Transport with hyperrectangle storage fees.
//!
//! The fee is the indicator of a box `[a, b]`, so the problem is to minimize
//! the transport cost `T(lambda)` over the simplex intersected with the box.
//! `T` is convex with gradient `-psi(lambda)`, where `psi(lambda)` solves
//! `G(psi) = lambda`.
//!
//! The solver runs projected gradient steps to find the active bounds, then
//! polishes with a primal-dual active set iteration: dual entries on free
//! coordinates are pinned to a common value and the bound coordinates are
//! solved for exactly.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cost_geometry::{c_star_on_grid, canonicalize, DualVector};
use crate::dual_solver::{damped_newton, solve_principal, voronoi_start, NewtonOptions};
use crate::error::{Error, Result};
use crate::gridded_measure::{g_map, mass_and_jacobian, Instance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperrectangleFee {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl HyperrectangleFee {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::SizeMismatch { expected: lower.len(), got: upper.len() });
        }
        if lower.is_empty() {
            return Err(Error::InfeasibleFee("empty box".into()));
        }
        for (i, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !(a.is_finite() && b.is_finite()) || a > b {
                return Err(Error::InfeasibleFee(format!("coordinate {i}: lower {a} exceeds upper {b}")));
            }
        }
        let (sa, sb): (f64, f64) = (lower.iter().sum(), upper.iter().sum());
        if sa > 1.0 + 1e-12 || sb < 1.0 - 1e-12 {
            return Err(Error::InfeasibleFee(format!("box sums [{sa}, {sb}] miss 1")));
        }
        Ok(Self { lower, upper })
    }

    /// The box `[0, 1]^n`, which leaves the simplex unconstrained.
    pub fn unconstrained(n: usize) -> Self {
        Self { lower: vec![0.0; n], upper: vec![1.0; n] }
    }

    /// The degenerate box `{lambda}`.
    pub fn pinned(lambda: &[f64]) -> Result<Self> {
        Self::new(lambda.to_vec(), lambda.to_vec())
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Fee value: zero inside the box, infinite outside.
    pub fn value(&self, lambda: &[f64], tol: f64) -> f64 {
        if self.contains(lambda, tol) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn contains(&self, lambda: &[f64], tol: f64) -> bool {
        lambda.len() == self.len() && lambda.iter().zip(self.lower.iter().zip(&self.upper)).all(|(l, (a, b))| *l >= a - tol && *l <= b + tol)
    }

    /// Copy with upper bound `i` raised by `eps`.
    pub fn enlarge_upper(&self, i: usize, eps: f64) -> Result<Self> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange { index: i, n: self.len() });
        }
        let mut upper = self.upper.clone();
        upper[i] += eps;
        Self::new(self.lower.clone(), upper)
    }

    /// If `other` differs from `self` only by a larger upper bound at one
    /// coordinate, returns that coordinate and the increase.
    pub fn single_enlargement(&self, other: &Self) -> Option<(usize, f64)> {
        if self.len() != other.len() || self.lower != other.lower {
            return None;
        }
        let diff: Vec<usize> = (0..self.len()).filter(|&i| self.upper[i] != other.upper[i]).collect();
        match diff.as_slice() {
            [] => Some((0, 0.0)),
            [k] if other.upper[*k] > self.upper[*k] => Some((*k, other.upper[*k] - self.upper[*k])),
            _ => None,
        }
    }

    /// Euclidean projection onto the simplex intersected with the box.
    ///
    /// The projection is `clip(v_i - theta, a_i, b_i)` for the unique shift
    /// `theta` making the coordinates sum to one; `theta` is found by bisection.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.len() {
            return Err(Error::SizeMismatch { expected: self.len(), got: v.len() });
        }
        let at = |theta: f64| -> f64 { (0..v.len()).map(|i| (v[i] - theta).clamp(self.lower[i], self.upper[i])).sum() };
        let mut lo = (0..v.len()).map(|i| v[i] - self.upper[i]).fold(f64::INFINITY, f64::min) - 1.0;
        let mut hi = (0..v.len()).map(|i| v[i] - self.lower[i]).fold(f64::NEG_INFINITY, f64::max) + 1.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if at(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let theta = 0.5 * (lo + hi);
        let mut out: Vec<f64> = (0..v.len()).map(|i| (v[i] - theta).clamp(self.lower[i], self.upper[i])).collect();
        // Put the last rounding error on a free coordinate, if there is one.
        let err = out.iter().sum::<f64>() - 1.0;
        if let Some(i) = (0..out.len()).find(|&i| out[i] - err >= self.lower[i] && out[i] - err <= self.upper[i] && out[i] > self.lower[i] && out[i] < self.upper[i]) {
            out[i] -= err;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageOptions {
    pub newton: NewtonOptions,
    /// Cap on projected gradient steps before the active set polish.
    pub max_outer: usize,
    /// Targets are kept at least this large when solving for dual vectors.
    pub clamp: f64,
    /// Mass tolerance for deciding that a coordinate sits on a bound.
    pub bound_tol: f64,
    pub max_active_set: usize,
}

impl Default for StorageOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions { tol: 1e-10, ..NewtonOptions::default() },
            max_outer: 400,
            clamp: 1e-9,
            bound_tol: 1e-9,
            max_active_set: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSolution {
    pub psi: DualVector,
    pub lambda: Vec<f64>,
    pub kkt_residual: f64,
    pub gradient_steps: usize,
    pub active_set_steps: usize,
}

/// Transport cost to `lambda` evaluated through the dual: `-int psi^{c*} dmu - <psi, lambda>`.
/// Exact when `psi` is optimal for `lambda`, a lower bound otherwise.
pub fn transport_cost(inst: Instance<'_>, psi: &[f64], lambda: &[f64]) -> Result<f64> {
    let mu = inst.measure;
    let cs = c_star_on_grid(inst.cost, inst.sites, psi, mu)?;
    let integral: f64 = cs.iter().zip(mu.density()).map(|(c, r)| c * r).sum::<f64>() * mu.pixel_volume();
    Ok(-integral - psi.iter().zip(lambda).map(|(p, l)| p * l).sum::<f64>())
}

/// Transport cost to `lambda`, solving for the optimal dual vector first.
pub fn storage_objective(inst: Instance<'_>, lambda: &[f64], opts: &StorageOptions) -> Result<f64> {
    let psi = dual_at(inst, lambda, None, opts)?;
    transport_cost(inst, &psi, lambda)
}

fn clamped(lambda: &[f64], clamp: f64) -> Vec<f64> {
    let mut t: Vec<f64> = lambda.iter().map(|v| v.max(clamp)).collect();
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

fn dual_at(inst: Instance<'_>, lambda: &[f64], init: Option<&[f64]>, opts: &StorageOptions) -> Result<Vec<f64>> {
    let target = clamped(lambda, opts.clamp);
    Ok(damped_newton(inst, &target, init, &opts.newton)?.psi.values)
}

fn fiedler(jac: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(-jac);
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev.get(1).copied().unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
    Pinned,
    Free,
}

fn classify(lambda: &[f64], fee: &HyperrectangleFee, tol: f64) -> Vec<Side> {
    (0..lambda.len())
        .map(|i| {
            let (a, b) = (fee.lower[i], fee.upper[i]);
            let lo = lambda[i] <= a + tol;
            let hi = lambda[i] >= b - tol;
            match (lo, hi) {
                (true, true) => Side::Pinned,
                (true, false) => Side::Lower,
                (false, true) => Side::Upper,
                _ => Side::Free,
            }
        })
        .collect()
}

/// Minimizes `T(lambda)` over the simplex intersected with `fee`.
pub fn solve_storage_fee(inst: Instance<'_>, fee: &HyperrectangleFee, opts: &StorageOptions) -> Result<StorageSolution> {
    let n = inst.n_sites();
    if fee.len() != n {
        return Err(Error::SizeMismatch { expected: n, got: fee.len() });
    }
    let mut lambda = fee.project(&vec![1.0 / n as f64; n])?;
    let mut psi = voronoi_start(inst);
    let mut sides = classify(&lambda, fee, 0.0);
    let mut stable = 0;
    let mut steps = 0;
    if sides.iter().any(|s| *s != Side::Pinned) {
        for _ in 0..opts.max_outer {
            steps += 1;
            psi = dual_at(inst, &lambda, Some(&psi), opts)?;
            let (_, jac) = mass_and_jacobian(inst, &psi)?;
            let s = fiedler(&jac);
            let v: Vec<f64> = lambda.iter().zip(&psi).map(|(l, p)| l + s * p).collect();
            let next = fee.project(&v)?;
            let change: f64 = next.iter().zip(&lambda).map(|(a, b)| (a - b).abs()).sum();
            lambda = next;
            let now = classify(&lambda, fee, 0.0);
            stable = if now == sides { stable + 1 } else { 0 };
            sides = now;
            if change <= 1e-12 || stable >= 8 {
                break;
            }
        }
    }
    let (psi, lambda, polish) = active_set_polish(inst, fee, sides, psi, opts)?;
    let mut sol = StorageSolution { psi: DualVector::new(psi), lambda, kkt_residual: 0.0, gradient_steps: steps, active_set_steps: polish };
    sol.kkt_residual = verify_storage_optimality(&sol, fee, opts.bound_tol);
    Ok(sol)
}

/// Minimizes `sum_i violation(psi_i - t)` over `t` and returns the minimum and minimizer.
fn cone_residual(psi: &[f64], sides: &[Side]) -> (f64, f64) {
    let at = |t: f64| -> f64 {
        psi.iter()
            .zip(sides)
            .map(|(p, s)| match s {
                Side::Free => (p - t).abs(),
                Side::Upper => (t - p).max(0.0),
                Side::Lower => (p - t).max(0.0),
                Side::Pinned => 0.0,
            })
            .sum()
    };
    // Convex and piecewise linear, so a breakpoint is optimal.
    let mut best = (at(0.0), 0.0);
    for &t in psi {
        let r = at(t);
        if r < best.0 {
            best = (r, t);
        }
    }
    best
}

/// Distance of `psi` from the cone of subgradients of the fee at `lambda`,
/// restricted to the simplex: free coordinates need `psi_i = t`, coordinates
/// at their upper bound need `psi_i >= t`, at the lower bound `psi_i <= t`.
pub fn verify_storage_optimality(sol: &StorageSolution, fee: &HyperrectangleFee, tol: f64) -> f64 {
    let sides = classify(&sol.lambda, fee, tol);
    cone_residual(&sol.psi.values, &sides).0
}

fn active_set_polish(
    inst: Instance<'_>,
    fee: &HyperrectangleFee,
    mut sides: Vec<Side>,
    mut psi: Vec<f64>,
    opts: &StorageOptions,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let n = sides.len();
    let bound = |i: usize, s: Side| if s == Side::Upper { fee.upper[i] } else { fee.lower[i] };
    let mut rounds = 0;
    loop {
        rounds += 1;
        let free: Vec<usize> = (0..n).filter(|&i| sides[i] == Side::Free).collect();
        let bounded: Vec<usize> = (0..n).filter(|&i| sides[i] != Side::Free).collect();
        let mut lambda = vec![0.0; n];
        if free.is_empty() {
            for i in 0..n {
                lambda[i] = bound(i, sides[i]);
            }
            if (lambda.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InfeasibleFee("active bounds do not sum to one".into()));
            }
            psi = dual_at(inst, &lambda, Some(&psi), opts)?;
        } else {
            let shift = free.iter().map(|&i| psi[i]).sum::<f64>() / free.len() as f64;
            psi.iter_mut().for_each(|p| *p -= shift);
            for &i in &free {
                psi[i] = 0.0;
            }
            let targets: Vec<f64> = bounded.iter().map(|&i| bound(i, sides[i]).max(opts.clamp)).collect();
            psi = restricted_newton(inst, &bounded, &targets, psi, &opts.newton)?;
            let g = g_map(inst, &psi)?;
            for i in 0..n {
                lambda[i] = if sides[i] == Side::Free { g[i] } else { bound(i, sides[i]) };
            }
        }
        // Sign conditions on bound coordinates and box conditions on free ones.
        let (_, t) = if free.is_empty() { cone_residual(&psi, &sides) } else { (0.0, 0.0) };
        let ptol = 1e-9 * (1.0 + psi.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let mut worst: Option<(usize, Side, f64)> = None;
        let mut consider = |i: usize, to: Side, amount: f64| {
            if amount > worst.map_or(0.0, |w| w.2) {
                worst = Some((i, to, amount));
            }
        };
        for i in 0..n {
            match sides[i] {
                Side::Lower => consider(i, Side::Free, psi[i] - t - ptol),
                Side::Upper => consider(i, Side::Free, t - psi[i] - ptol),
                Side::Free => {
                    consider(i, Side::Lower, fee.lower[i] - lambda[i] - opts.bound_tol);
                    consider(i, Side::Upper, lambda[i] - fee.upper[i] - opts.bound_tol);
                }
                Side::Pinned => {}
            }
        }
        match worst {
            Some((i, to, _)) if rounds < opts.max_active_set => sides[i] = to,
            _ => {
                let lambda = fee.project(&lambda)?;
                canonicalize(&mut psi);
                return Ok((psi, lambda, rounds));
            }
        }
    }
}

/// Solves `G_i(psi) = target_i` for `i` in `idx`, holding the other entries fixed.
fn restricted_newton(inst: Instance<'_>, idx: &[usize], target: &[f64], mut psi: Vec<f64>, opts: &NewtonOptions) -> Result<Vec<f64>> {
    if idx.is_empty() {
        return Ok(psi);
    }
    let residual = |g: &[f64]| idx.iter().zip(target).map(|(&i, t)| (g[i] - t).abs()).sum::<f64>();
    let (mut g, mut jac) = mass_and_jacobian(inst, &psi)?;
    let mut res = residual(&g);
    let mut iters = 0;
    while res > opts.tol {
        if iters >= opts.max_iter {
            return Err(Error::InvalidInput(format!("active-set solve stalled at residual {res:e}")));
        }
        iters += 1;
        let rhs: Vec<f64> = idx.iter().zip(target).map(|(&i, t)| t - g[i]).collect();
        let d = solve_principal(&jac, idx, &rhs)?;
        let mut tau = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let mut cand = psi.clone();
            for (k, &i) in idx.iter().enumerate() {
                cand[i] += tau * d[k];
            }
            let (gc, jc) = mass_and_jacobian(inst, &cand)?;
            let rc = residual(&gc);
            if rc < res {
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
            return Err(Error::InvalidInput(format!("active-set solve stalled at residual {res:e}")));
        }
    }
    Ok(psi)
}
