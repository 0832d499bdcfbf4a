//! Rejection rates of the bootstrap tests over simulated datasets.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    default_shape, fixed, gen_dgp, rep_index, BandwidthRule, DgpKind, DgpSpec, InputLaw, NoiseLaw, ReportHeader,
};
use crate::error::{Error, Result};
use crate::estimators::ShapeSpec;
use crate::grid::uniform_grid;
use crate::kernel::Kernel;
use crate::rng::{SeedLedger, StreamRole};
use crate::shape_tests::{
    affinity_test_with, wild_bootstrap_shape_test, AffinityOptions, BootstrapScheme, TestResult, WeightKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    Shape,
    Affinity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerScenario {
    pub name: String,
    pub kind: DgpKind,
    pub noise: NoiseLaw,
    #[serde(default)]
    pub input_law: Option<InputLaw>,
    pub n: usize,
}

fn default_alphas() -> Vec<f64> {
    vec![0.05]
}

fn default_grid_points() -> usize {
    20
}

fn default_weights() -> WeightKind {
    WeightKind::Rademacher
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig {
    pub test: TestKind,
    pub scenarios: Vec<PowerScenario>,
    pub reps: usize,
    pub b: usize,
    #[serde(default = "default_weights")]
    pub weights: WeightKind,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default)]
    pub bandwidth: BandwidthRule,
    /// Evaluation points per input dimension.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Null shape of the shape test.
    #[serde(default = "default_shape")]
    pub shape: String,
    /// Affinity test: add monotonicity to every fit.
    #[serde(default)]
    pub monotone: bool,
    /// Affinity test: resample residuals instead of wild weights.
    #[serde(default)]
    pub ordinary: bool,
}

impl PowerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() || self.reps == 0 || self.b == 0 {
            return Err(Error::InvalidParameter("need scenarios, replications and bootstrap draws".into()));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::InvalidParameter("alphas must lie in (0, 1)".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidParameter("need at least two grid points per dimension".into()));
        }
        for s in &self.scenarios {
            self.spec(s, 0).validate()?;
            ShapeSpec::parse(&self.shape, s.kind.dim())?;
        }
        Ok(())
    }

    fn spec(&self, s: &PowerScenario, seed: u64) -> DgpSpec {
        DgpSpec {
            kind: s.kind,
            input_law: s.input_law.unwrap_or_else(|| s.kind.default_input_law()),
            noise: s.noise,
            n: s.n,
            seed,
            gamma: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRate {
    pub alpha: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub scenario: String,
    pub n: usize,
    pub sigma: f64,
    pub reps: usize,
    pub completed: usize,
    pub failures: Vec<super::RepFailure>,
    pub statistics: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Share of completed replications with `p < alpha`.
    pub rejection_rates: Vec<RejectionRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub header: ReportHeader,
    pub config: PowerConfig,
    pub rows: Vec<PowerRow>,
}

impl PowerReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scenario", "n", "sigma", "reps", "completed", "alpha", "rejection_rate"])?;
        for r in &self.rows {
            for a in &r.rejection_rates {
                w.write_record([
                    r.scenario.clone(),
                    r.n.to_string(),
                    r.sigma.to_string(),
                    r.reps.to_string(),
                    r.completed.to_string(),
                    a.alpha.to_string(),
                    a.rate.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn rate(&self, scenario: &str, alpha: f64) -> Option<f64> {
        let row = self.rows.iter().find(|r| r.scenario == scenario)?;
        row.rejection_rates.iter().find(|a| a.alpha == alpha).map(|a| a.rate)
    }
}

fn run_one(cfg: &PowerConfig, s: &PowerScenario, data_seed: u64, test_seed: u64) -> Result<TestResult> {
    let data = gen_dgp(&cfg.spec(s, data_seed))?;
    let d = s.kind.dim();
    let h = cfg.bandwidth.select(&data.x, &data.y, cfg.kernel)?;
    let bw = fixed(h);
    let grid = uniform_grid(&data.x, &vec![cfg.grid_points; d])?;
    let scheme = BootstrapScheme { kind: cfg.weights, b: cfg.b };
    let alpha = cfg.alphas[0];
    match cfg.test {
        TestKind::Shape => {
            let shape = ShapeSpec::parse(&cfg.shape, d)?;
            wild_bootstrap_shape_test(
                &data.x, &data.y, &grid, &bw, cfg.kernel, &shape, &scheme, alpha, test_seed, false,
            )
        }
        TestKind::Affinity => {
            let opts = AffinityOptions { ordinary: cfg.ordinary, ..Default::default() };
            affinity_test_with(&data.x, &data.y, &grid, &bw, cfg.kernel, &scheme, alpha, test_seed, cfg.monotone, &opts)
        }
    }
}

pub fn run_power_study(cfg: &PowerConfig) -> Result<PowerReport> {
    cfg.validate()?;
    let ledger = SeedLedger::new(cfg.seed);
    let mut rows = Vec::new();
    for (si, s) in cfg.scenarios.iter().enumerate() {
        let outcomes: Vec<Result<TestResult>> = (0..cfg.reps)
            .into_par_iter()
            .map(|r| {
                let idx = rep_index(si, s.n, r);
                let data_seed = ledger.child(idx);
                let test_seed = rand::RngCore::next_u64(&mut ledger.stream(idx, StreamRole::Bootstrap));
                run_one(cfg, s, data_seed, test_seed)
            })
            .collect();
        let mut statistics = Vec::new();
        let mut p_values = Vec::new();
        let mut failures = Vec::new();
        for (rep, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(t) => {
                    statistics.push(t.statistic);
                    p_values.push(t.p_value);
                }
                Err(e @ Error::Consistency(_)) => return Err(e),
                Err(e) => {
                    log::warn!("scenario {}, replication {rep} failed: {e}", s.name);
                    failures.push(super::RepFailure { rep, message: e.to_string() });
                }
            }
        }
        let done = p_values.len();
        let rejection_rates = cfg
            .alphas
            .iter()
            .map(|&alpha| RejectionRate {
                alpha,
                rate: if done == 0 {
                    f64::NAN
                } else {
                    p_values.iter().filter(|&&p| p < alpha).count() as f64 / done as f64
                },
            })
            .collect();
        rows.push(PowerRow {
            scenario: s.name.clone(),
            n: s.n,
            sigma: s.noise.sigma(),
            reps: cfg.reps,
            completed: done,
            failures,
            statistics,
            p_values,
            rejection_rates,
        });
    }
    let name = match cfg.test {
        TestKind::Shape => "shape-test",
        TestKind::Affinity => "affinity-test",
    };
    Ok(PowerReport { header: ReportHeader::new(name, cfg.seed), config: cfg.clone(), rows })
}
