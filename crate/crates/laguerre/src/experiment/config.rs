//! Experiment configuration: a versioned TOML document with no unknown keys.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost_geometry::{CostFamily, CostModel, SiteSet};
use crate::dual_solver::NewtonOptions;
use crate::error::{Error, Result};
use crate::gridded_measure::GriddedMeasure;

pub const SCHEMA_VERSION: u32 = 1;
/// Smallest accepted number of pixels per unit length.
pub const MIN_RESOLUTION: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub problem: Option<ProblemConfig>,
    pub target: Option<TargetConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    pub sweep: Option<SweepConfig>,
    pub storage: Option<StorageConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub cost: CostFamily,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Pixels per unit length along every axis.
    pub resolution: usize,
    #[serde(default)]
    pub density: DensityConfig,
    pub sites: SitesConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    #[default]
    Uniform,
    Gaussian { mean: Vec<f64>, sigma: Vec<f64> },
    /// Binary density file, resampled nowhere: its grid replaces the box and resolution.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SitesConfig {
    Explicit { points: Vec<Vec<f64>> },
    /// `count` points drawn uniformly from the box, away from each other and the boundary.
    Random { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Uniform,
    Explicit { lambda: Vec<f64> },
    /// Masses `G(psi)` of a given dual vector.
    FromDual { psi: Vec<f64> },
    /// Random masses with weights drawn from `[1, 2]`.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, max_halvings: 40 }
    }
}

impl SolverConfig {
    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions { tol: self.tol, max_iter: self.max_iter, max_halvings: self.max_halvings }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub q: f64,
    /// Poincare-Wirtinger constant; half the domain diameter when absent.
    pub c_pw: Option<f64>,
    /// Subtracted from the smallest measured mass to obtain `eps`.
    pub epsilon_tol: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { q: 2.0, c_pw: None, epsilon_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub trials: usize,
    /// Perturbation sizes `t`; each trial is evaluated at every one.
    pub t_grid: Vec<f64>,
    /// Site counts cycled over trials when sites are random.
    #[serde(default)]
    pub site_counts: Option<Vec<usize>>,
    /// Masses are kept at least `mass_floor / N` after perturbation.
    #[serde(default = "default_mass_floor")]
    pub mass_floor: f64,
}

fn default_mass_floor() -> f64 {
    0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageConfig {
    pub n: usize,
    /// Pixels per unit length on `[0, n]`.
    #[serde(default = "default_storage_resolution")]
    pub resolution: usize,
}

fn default_storage_resolution() -> usize {
    1024
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_overrides(mut self, seed: Option<u64>, resolution: Option<usize>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(r) = resolution {
            if let Some(p) = self.problem.as_mut() {
                p.resolution = r;
            }
            if let Some(s) = self.storage.as_mut() {
                s.resolution = r;
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if let Some(p) = &self.problem {
            p.validate()?;
        }
        let s = &self.solver;
        if !(s.tol > 0.0) || s.max_iter == 0 {
            return Err(config_err("solver.tol must be positive and solver.max_iter at least 1"));
        }
        let st = &self.stability;
        if !(st.q >= 1.0) || st.c_pw.is_some_and(|c| !(c > 0.0)) || !(st.epsilon_tol >= 0.0) {
            return Err(config_err("stability needs q >= 1, c_pw > 0 and epsilon_tol >= 0"));
        }
        if let Some(sw) = &self.sweep {
            if sw.trials == 0 {
                return Err(config_err("sweep.trials must be at least 1"));
            }
            if sw.t_grid.is_empty() || sw.t_grid[0] <= 0.0 || sw.t_grid.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(config_err("sweep.t_grid must be positive and strictly increasing"));
            }
            if sw.site_counts.as_ref().is_some_and(|c| c.is_empty() || c.iter().any(|&n| n < 2)) {
                return Err(config_err("sweep.site_counts must list counts of at least 2"));
            }
            if !(0.0..1.0).contains(&sw.mass_floor) {
                return Err(config_err("sweep.mass_floor must lie in [0, 1)"));
            }
        }
        if let Some(st) = &self.storage {
            if st.n < 2 {
                return Err(config_err("storage.n must be at least 2"));
            }
            if st.resolution < MIN_RESOLUTION {
                return Err(config_err(format!("storage.resolution must be at least {MIN_RESOLUTION}")));
            }
        }
        if let (Some(t), Some(p)) = (&self.target, &self.problem) {
            let n = p.site_count();
            let len = match t {
                TargetConfig::Explicit { lambda } => Some(lambda.len()),
                TargetConfig::FromDual { psi } => Some(psi.len()),
                _ => None,
            };
            if len.is_some_and(|l| l != n) {
                return Err(config_err(format!("target has {} entries for {n} sites", len.unwrap())));
            }
            if let TargetConfig::Explicit { lambda } = t {
                let sum: f64 = lambda.iter().sum();
                if lambda.iter().any(|v| !(*v > 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(config_err("target.lambda must be positive and sum to 1"));
                }
            }
        }
        Ok(())
    }

    pub fn require_problem(&self) -> Result<&ProblemConfig> {
        self.problem.as_ref().ok_or_else(|| config_err("missing [problem] section"))
    }

    pub fn require_sweep(&self) -> Result<&SweepConfig> {
        self.sweep.as_ref().ok_or_else(|| config_err("missing [sweep] section"))
    }

    pub fn require_storage(&self) -> Result<&StorageConfig> {
        self.storage.as_ref().ok_or_else(|| config_err("missing [storage] section"))
    }
}

impl ProblemConfig {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn site_count(&self) -> usize {
        match &self.sites {
            SitesConfig::Explicit { points } => points.len(),
            SitesConfig::Random { count } => *count,
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.upper.len() != d {
            return Err(config_err("problem.lower and problem.upper must have the same nonzero length"));
        }
        if self.lower.iter().zip(&self.upper).any(|(a, b)| !(a < b)) {
            return Err(config_err("problem.lower must be below problem.upper"));
        }
        if self.resolution < MIN_RESOLUTION {
            return Err(config_err(format!("problem.resolution must be at least {MIN_RESOLUTION}")));
        }
        if let DensityConfig::Gaussian { mean, sigma } = &self.density {
            if mean.len() != d || sigma.len() != d || sigma.iter().any(|s| !(*s > 0.0)) {
                return Err(config_err("gaussian density needs mean and positive sigma of the domain dimension"));
            }
        }
        match &self.sites {
            SitesConfig::Explicit { points } => {
                if points.is_empty() || points.iter().any(|p| p.len() != d) {
                    return Err(config_err("sites.points must be nonempty with one coordinate per dimension"));
                }
            }
            SitesConfig::Random { count } => {
                if *count == 0 {
                    return Err(config_err("sites.count must be at least 1"));
                }
            }
        }
        Ok(())
    }

    pub fn cost(&self) -> Result<CostModel> {
        CostModel::new(self.cost, self.dim())
    }

    /// Grid shape: `resolution` pixels per unit length, at least one per axis.
    pub fn shape(&self) -> Vec<usize> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| (((b - a) * self.resolution as f64).round() as usize).max(1)).collect()
    }

    pub fn measure(&self) -> Result<GriddedMeasure> {
        let (lo, hi) = (self.lower.clone(), self.upper.clone());
        match &self.density {
            DensityConfig::Uniform => GriddedMeasure::uniform(lo, hi, self.shape()),
            DensityConfig::Gaussian { mean, sigma } => GriddedMeasure::gaussian(lo, hi, self.shape(), mean, sigma),
            DensityConfig::File { path } => GriddedMeasure::read_density_file(path),
        }
    }

    /// Sites for one trial; `count` overrides the configured count for random sites.
    pub fn sites(&self, rng: &mut ChaCha8Rng, count: Option<usize>) -> Result<SiteSet> {
        match &self.sites {
            SitesConfig::Explicit { points } => SiteSet::new(points),
            SitesConfig::Random { count: c } => SiteSet::new(&random_points(&self.lower, &self.upper, count.unwrap_or(*c), rng)),
        }
    }
}

/// Uniform points in the box shrunk by 5% per side, rejecting any closer than a
/// quarter of the typical spacing to an earlier one.
pub fn random_points(lower: &[f64], upper: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = lower.len();
    let vol: f64 = lower.iter().zip(upper).map(|(a, b)| b - a).product();
    let min_sep = 0.25 * (vol / n as f64).powf(1.0 / d as f64);
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n);
    while pts.len() < n {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..200 {
            let p: Vec<f64> = lower.iter().zip(upper).map(|(a, b)| a + (b - a) * (0.05 + 0.9 * rng.gen::<f64>())).collect();
            let sep = pts.iter().map(|q| crate::cost_geometry::dist(q, &p)).fold(f64::INFINITY, f64::min);
            if sep >= min_sep {
                best = Some((sep, p));
                break;
            }
            if best.as_ref().map_or(true, |(s, _)| sep > *s) {
                best = Some((sep, p));
            }
        }
        pts.push(best.expect("at least one candidate").1);
    }
    pts
}

/// Masses proportional to weights drawn from `[1, 2]`.
pub fn random_masses(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| 1.0 + rng.gen::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// A zero-sum direction with unit l1 norm.
pub fn random_direction(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
    let mean = v.iter().sum::<f64>() / n as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    v.iter_mut().for_each(|x| *x /= l1);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    const MINIMAL: &str = r#"
schema_version = 1
seed = 7

[problem]
cost = "inner_product"
lower = [0.0, 0.0]
upper = [1.0, 1.0]
resolution = 64
sites = { kind = "random", count = 5 }
"#;

    #[test]
    fn parses_and_hashes() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.problem.as_ref().unwrap().shape(), vec![64, 64]);
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!(c.hash().len(), 16);
        let again = ExperimentConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
        let other = c.clone().with_overrides(Some(8), None).unwrap();
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        let unknown = MINIMAL.replace("seed = 7", "seed = 7\ncolour = 1");
        assert!(matches!(ExperimentConfig::from_toml_str(&unknown), Err(Error::Config(_))));
        let version = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(ExperimentConfig::from_toml_str(&version).is_err());
        let coarse = MINIMAL.replace("resolution = 64", "resolution = 32");
        assert!(ExperimentConfig::from_toml_str(&coarse).is_err());
        let grid = format!("{MINIMAL}\n[sweep]\ntrials = 1\nt_grid = [0.1, 0.01]\n");
        assert!(ExperimentConfig::from_toml_str(&grid).is_err());
        let zero = format!("{MINIMAL}\n[sweep]\ntrials = 0\nt_grid = [0.01]\n");
        assert!(ExperimentConfig::from_toml_str(&zero).is_err());
        let target = format!("{MINIMAL}\n[target]\nkind = \"explicit\"\nlambda = [0.5, 0.5]\n");
        assert!(ExperimentConfig::from_toml_str(&target).is_err());
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert!(c.with_overrides(None, Some(10)).is_err());
    }

    #[test]
    fn random_draws_are_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(random_points(&[0.0, 0.0], &[1.0, 1.0], 10, &mut a), random_points(&[0.0, 0.0], &[1.0, 1.0], 10, &mut b));
        let d = random_direction(6, &mut a);
        assert!(d.iter().sum::<f64>().abs() < 1e-15);
        assert!((d.iter().map(|x| x.abs()).sum::<f64>() - 1.0).abs() < 1e-15);
        let m = random_masses(6, &mut a);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(m.iter().all(|v| *v >= 1.0 / 11.0));
    }
}
