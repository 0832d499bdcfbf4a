//! Shape-constrained kernel-weighted least squares.
//!
//! Local-linear fits at a set of evaluation points, coupled by Afriat-type
//! inequalities so that the fitted function is concave or convex and
//! monotone. Includes the convex nonparametric least squares baseline,
//! bootstrap shape tests, a partially linear extension and a simulation
//! harness.

pub mod error;
pub mod estimators;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod lp;
pub mod partially_linear;
pub mod qp;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
pub use grid::{
    adjacency_pairs, convex_hull_filter, percentile_grid, uniform_grid, AdjacencyPairs, EvalGrid, GridProvenance,
    HullTester, KdeBandwidth,
};
pub use kernel::{weight_matrix, BandwidthSpec, Kernel, WeightMatrix};
pub use linalg::Matrix;

/// Version string embedded in every model and report.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
