//! Monte Carlo drivers: data-generating processes, RMSE tables, test
//! size and power, and bandwidth sweeps. Every random draw comes from the
//! seed ledger, so reports depend only on the configuration.

mod dgp;
mod power;
pub mod presets;
mod rmse;
mod sweep;

use serde::{Deserialize, Serialize};

pub use dgp::{
    ces_core, gen_dgp, grid_counts, sshape_scale, Dataset, DgpKind, DgpSpec, InputLaw, NoiseLaw, SSHAPE_BETA,
    SSHAPE_SIGMA,
};
pub use power::{run_power_study, PowerConfig, PowerReport, PowerRow, PowerScenario, RejectionRate, TestKind};
pub use rmse::{
    run_rmse_experiment, CellReport, EstimatorKind, EstimatorSummary, ExperimentReport, RepFailure, RmseConfig,
    TimingRecord,
};
pub use sweep::{bandwidth_sensitivity_sweep, SweepConfig, SweepPoint, SweepReport};

use crate::error::{Error, Result};
use crate::kernel::{default_bandwidth_candidates, loocv_bandwidth, BandwidthSpec, Kernel};
use crate::linalg::Matrix;
use crate::rng::GENERATOR_NAME;

/// Provenance block at the top of every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub tool_version: String,
    pub generator: String,
    pub master_seed: u64,
    pub experiment: String,
}

impl ReportHeader {
    pub fn new(experiment: &str, master_seed: u64) -> Self {
        Self {
            tool_version: crate::TOOL_VERSION.to_string(),
            generator: GENERATOR_NAME.to_string(),
            master_seed,
            experiment: experiment.to_string(),
        }
    }
}

/// How each replication picks its bandwidth.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// Leave-one-out over the default candidate ladder.
    #[default]
    Loocv,
    /// The same `h` in every dimension.
    Fixed { h: f64 },
}

impl BandwidthRule {
    pub(crate) fn select(&self, x: &Matrix, y: &[f64], kernel: Kernel) -> Result<Vec<f64>> {
        match self {
            BandwidthRule::Loocv => loocv_bandwidth(x, y, &default_bandwidth_candidates(x), kernel),
            BandwidthRule::Fixed { h } => Ok(vec![*h; x.ncols()]),
        }
    }
}

/// Root mean squared difference.
pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64).sqrt()
}

/// The harness computes the truth against itself before every replication.
pub(crate) fn self_check(truth: &[f64]) -> Result<()> {
    let r = rmse(truth, truth);
    if r != 0.0 {
        return Err(Error::Consistency(format!("truth RMSE against itself is {r}")));
    }
    Ok(())
}

/// Mean and sample standard deviation, summed in index order.
pub(crate) fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

pub(crate) fn fixed(h: Vec<f64>) -> BandwidthSpec {
    BandwidthSpec::Fixed(h)
}

/// Stream index of replication `rep` in the cell with dimension `d` and sample size `n`.
pub(crate) fn rep_index(d: usize, n: usize, rep: usize) -> u64 {
    ((d as u64) << 56) ^ ((n as u64) << 24) ^ rep as u64
}

fn default_trim() -> f64 {
    0.1
}

fn default_shape() -> String {
    "concave-increasing".into()
}

/// Grid points whose every coordinate stays `trim` of the range away from
/// the grid's bounding box.
pub(crate) fn interior_mask(points: &Matrix, trim: f64) -> Vec<bool> {
    let ranges = points.column_ranges();
    points
        .rows_iter()
        .map(|r| {
            r.iter().zip(&ranges).all(|(v, (lo, hi))| {
                let pad = trim * (hi - lo);
                *v >= lo + pad - 1e-12 && *v <= hi - pad + 1e-12
            })
        })
        .collect()
}
