//! Semi-discrete optimal transport on a gridded source measure.
//!
//! The crate computes Laguerre cells, the mass map `G` and its derivative,
//! solves for dual vectors with a damped Newton method, handles hyperrectangle
//! storage fees, and measures how cells and potentials move when the target
//! masses are perturbed.
//!
//! Indices are zero-based throughout: site `i` of an `N`-site problem lives
//! in `0..N`, and partition labels use the same convention.

pub mod cost_geometry;
pub mod dual_solver;
pub mod error;
pub mod exchange_digraph;
pub mod experiment;
pub mod gridded_measure;
pub mod spectral_analysis;
pub mod stability_metrics;
pub mod storage_fee;

mod edt;
mod hull;
mod polygon;

pub use cost_geometry::{CostFamily, CostModel, DualVector, SiteSet, UniversalConstants};
pub use error::{Error, Result};
pub use gridded_measure::{CellPartition, GriddedMeasure, Instance};
