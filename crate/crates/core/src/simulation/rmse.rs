//! RMSE tables over estimators, dimensions, sample sizes and grid sizes.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    default_shape, default_trim, fixed, gen_dgp, grid_counts, interior_mask, mean_sd, rep_index, rmse, self_check,
    BandwidthRule, DgpKind, DgpSpec, InputLaw, NoiseLaw, ReportHeader,
};
use crate::error::{Error, Result};
use crate::estimators::{cnls_fit, min_norm_gradients, sckls_fit_with_design, LocalDesign, ScklsOptions, ShapeSpec};
use crate::grid::{uniform_grid, EvalGrid};
use crate::kernel::Kernel;
use crate::partially_linear::{conditional_bandwidths, estimate_gamma_with};
use crate::rng::SeedLedger;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Sckls,
    Cnls,
    LocalLinear,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Sckls => "sckls",
            EstimatorKind::Cnls => "cnls",
            EstimatorKind::LocalLinear => "local-linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseConfig {
    /// Truth family; its dimension is replaced by each entry of `dims`.
    pub kind: DgpKind,
    /// Defaults to the family's own input law.
    #[serde(default)]
    pub input_law: Option<InputLaw>,
    pub noise: NoiseLaw,
    /// Contextual coefficients; when present every estimator sees the
    /// response adjusted by the estimated contextual effect.
    #[serde(default)]
    pub gamma: Vec<f64>,
    pub dims: Vec<usize>,
    pub n: Vec<usize>,
    /// Target evaluation-point counts.
    pub m: Vec<usize>,
    pub estimators: Vec<EstimatorKind>,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default)]
    pub bandwidth: BandwidthRule,
    #[serde(default = "default_shape")]
    pub shape: String,
    /// Fraction of the grid range dropped on each side for interior RMSE.
    #[serde(default = "default_trim")]
    pub interior_trim: f64,
}

impl RmseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.n.is_empty() || self.m.is_empty() || self.estimators.is_empty() {
            return Err(Error::InvalidParameter("dims, n, m and estimators must be non-empty".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidParameter("at least one replication is required".into()));
        }
        if !(0.0..0.5).contains(&self.interior_trim) {
            return Err(Error::InvalidParameter(format!("interior trim {} outside [0, 0.5)", self.interior_trim)));
        }
        for &d in &self.dims {
            let spec = self.spec(d, self.n[0], 0)?;
            spec.validate()?;
            ShapeSpec::parse(&self.shape, d)?;
        }
        Ok(())
    }

    fn spec(&self, d: usize, n: usize, seed: u64) -> Result<DgpSpec> {
        let kind = self.kind.with_dim(d)?;
        Ok(DgpSpec {
            kind,
            input_law: self.input_law.unwrap_or_else(|| kind.default_input_law()),
            noise: self.noise,
            n,
            seed,
            gamma: self.gamma.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    /// One entry per completed replication, in replication order.
    pub obs_rmse: Vec<f64>,
    pub eval_rmse: Vec<f64>,
    pub interior_eval_rmse: Vec<f64>,
    pub obs_mean: f64,
    pub obs_sd: f64,
    pub eval_mean: f64,
    pub eval_sd: f64,
    pub interior_eval_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub d: usize,
    pub n: usize,
    pub m_target: usize,
    pub grid_counts: Vec<usize>,
    /// Evaluation points actually used.
    pub m: usize,
    pub reps: usize,
    pub complete: bool,
    /// Data seed of every replication, completed or not.
    pub rep_seeds: Vec<u64>,
    /// Selected bandwidth per completed replication.
    pub bandwidths: Vec<Vec<f64>>,
    /// Estimated contextual coefficients per completed replication.
    pub gamma_hat: Vec<Vec<f64>>,
    pub estimators: Vec<EstimatorSummary>,
    pub failures: Vec<RepFailure>,
}

impl CellReport {
    pub fn estimator(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub d: usize,
    pub n: usize,
    pub m_target: usize,
    pub rep: usize,
    pub estimator: EstimatorKind,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub header: ReportHeader,
    pub config: RmseConfig,
    pub cells: Vec<CellReport>,
    /// Wall-clock times; kept out of the serialized report so that it stays
    /// reproducible.
    #[serde(skip)]
    pub timings: Vec<TimingRecord>,
}

impl ExperimentReport {
    /// Long-format table, one row per cell, estimator and replication.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["d", "n", "m_target", "m", "estimator", "rep", "obs_rmse", "eval_rmse", "interior_eval_rmse"])?;
        for c in &self.cells {
            for e in &c.estimators {
                for r in 0..e.obs_rmse.len() {
                    w.write_record([
                        c.d.to_string(),
                        c.n.to_string(),
                        c.m_target.to_string(),
                        c.m.to_string(),
                        e.estimator.name().to_string(),
                        r.to_string(),
                        e.obs_rmse[r].to_string(),
                        e.eval_rmse[r].to_string(),
                        e.interior_eval_rmse[r].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One row per cell and estimator with means and standard deviations.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "d",
            "n",
            "m_target",
            "m",
            "estimator",
            "completed",
            "obs_mean",
            "obs_sd",
            "eval_mean",
            "eval_sd",
            "interior_eval_mean",
        ])?;
        for c in &self.cells {
            for e in &c.estimators {
                w.write_record([
                    c.d.to_string(),
                    c.n.to_string(),
                    c.m_target.to_string(),
                    c.m.to_string(),
                    e.estimator.name().to_string(),
                    e.obs_rmse.len().to_string(),
                    e.obs_mean.to_string(),
                    e.obs_sd.to_string(),
                    e.eval_mean.to_string(),
                    e.eval_sd.to_string(),
                    e.interior_eval_mean.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timings_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for t in &self.timings {
            w.serialize(t)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Predictions of one estimator at the observations and at the grid.
pub(crate) struct Fitted {
    pub obs: Vec<f64>,
    pub eval: Vec<f64>,
}

/// Fits one estimator. `design` holds the grid weights, `at_obs` the
/// weights at the observations (local linear only).
pub(crate) fn fit_estimator(
    kind: EstimatorKind,
    design: &LocalDesign,
    at_obs: &LocalDesign,
    y: &[f64],
    shape: &ShapeSpec,
) -> Result<Fitted> {
    let x = &design.x;
    let grid = design.grid.points();
    match kind {
        EstimatorKind::Sckls => {
            let model = sckls_fit_with_design(design, y, shape, &ScklsOptions::default())?;
            let diag = &model.diagnostics;
            if let Some(unc) = diag.unconstrained_objective {
                if diag.objective < unc - 1e-9 * (1.0 + unc.abs()) {
                    return Err(Error::Consistency(format!(
                        "constrained objective {} below unconstrained {unc}",
                        diag.objective
                    )));
                }
            }
            Ok(Fitted { obs: model.predict_many(x), eval: model.predict_many(grid) })
        }
        EstimatorKind::Cnls => {
            let model = min_norm_gradients(&cnls_fit(x, y, shape)?)?;
            Ok(Fitted { obs: model.predict_many(x), eval: model.predict_many(grid) })
        }
        EstimatorKind::LocalLinear => {
            let p = design.block();
            let on_grid = design.solve_local(y, 0.0)?;
            let on_obs = at_obs.solve_local(y, 0.0)?;
            Ok(Fitted {
                obs: (0..at_obs.n_points()).map(|j| on_obs[j * p]).collect(),
                eval: (0..design.n_points()).map(|i| on_grid[i * p]).collect(),
            })
        }
    }
}

struct RepOutcome {
    bandwidth: Vec<f64>,
    gamma_hat: Vec<f64>,
    /// Per estimator: (obs, eval, interior eval) RMSE and seconds.
    scores: Vec<(f64, f64, f64, f64)>,
}

fn run_rep(cfg: &RmseConfig, d: usize, n: usize, m_target: usize, seed: u64) -> Result<RepOutcome> {
    let data = gen_dgp(&cfg.spec(d, n, seed)?)?;
    let shape = ShapeSpec::parse(&cfg.shape, d)?;
    let (y, gamma_hat) = match &data.z {
        Some(z) => {
            let bws = conditional_bandwidths(&data.x, &data.y, z, cfg.kernel)?;
            let ctx = estimate_gamma_with(z, &data.y, &data.x, &bws, cfg.kernel)?;
            (ctx.adjusted_y, ctx.gamma)
        }
        None => (data.y.clone(), Vec::new()),
    };
    let h = cfg.bandwidth.select(&data.x, &y, cfg.kernel)?;
    let bw = fixed(h.clone());
    let grid = uniform_grid(&data.x, &grid_counts(m_target, d))?;
    let truth_grid = data.truth.eval_many(grid.points());
    self_check(&data.g0)?;
    self_check(&truth_grid)?;
    let interior = interior_mask(grid.points(), cfg.interior_trim);
    let design = LocalDesign::new(&data.x, &grid, &bw, cfg.kernel)?;
    let at_obs = if cfg.estimators.contains(&EstimatorKind::LocalLinear) {
        LocalDesign::new(&data.x, &EvalGrid::from_points(data.x.clone()), &bw, cfg.kernel)?
    } else {
        design.clone()
    };
    let mut scores = Vec::with_capacity(cfg.estimators.len());
    for &kind in &cfg.estimators {
        let start = Instant::now();
        let fit = fit_estimator(kind, &design, &at_obs, &y, &shape)?;
        let secs = start.elapsed().as_secs_f64();
        let (pi, ti): (Vec<f64>, Vec<f64>) = fit
            .eval
            .iter()
            .zip(&truth_grid)
            .zip(&interior)
            .filter(|(_, &keep)| keep)
            .map(|((a, b), _)| (*a, *b))
            .unzip();
        scores.push((rmse(&fit.obs, &data.g0), rmse(&fit.eval, &truth_grid), rmse(&pi, &ti), secs));
    }
    Ok(RepOutcome { bandwidth: h, gamma_hat, scores })
}

pub fn run_rmse_experiment(cfg: &RmseConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ledger = SeedLedger::new(cfg.seed);
    let mut cells = Vec::new();
    let mut timings = Vec::new();
    for &d in &cfg.dims {
        for &n in &cfg.n {
            // the same datasets are reused across grid sizes
            let seeds: Vec<u64> = (0..cfg.reps).map(|r| ledger.child(rep_index(d, n, r))).collect();
            for &m_target in &cfg.m {
                let outcomes: Vec<Result<RepOutcome>> =
                    seeds.par_iter().map(|&s| run_rep(cfg, d, n, m_target, s)).collect();
                let counts = grid_counts(m_target, d);
                let mut failures = Vec::new();
                let mut done = Vec::new();
                for (rep, o) in outcomes.into_iter().enumerate() {
                    match o {
                        Ok(o) => done.push((rep, o)),
                        Err(e @ Error::Consistency(_)) => return Err(e),
                        Err(e) => {
                            log::warn!("d = {d}, n = {n}, m = {m_target}, replication {rep} failed: {e}");
                            failures.push(RepFailure { rep, message: e.to_string() });
                        }
                    }
                }
                let estimators = cfg
                    .estimators
                    .iter()
                    .enumerate()
                    .map(|(k, &estimator)| {
                        let obs: Vec<f64> = done.iter().map(|(_, o)| o.scores[k].0).collect();
                        let eval: Vec<f64> = done.iter().map(|(_, o)| o.scores[k].1).collect();
                        let interior: Vec<f64> = done.iter().map(|(_, o)| o.scores[k].2).collect();
                        let (obs_mean, obs_sd) = mean_sd(&obs);
                        let (eval_mean, eval_sd) = mean_sd(&eval);
                        let (interior_eval_mean, _) = mean_sd(&interior);
                        EstimatorSummary {
                            estimator,
                            obs_rmse: obs,
                            eval_rmse: eval,
                            interior_eval_rmse: interior,
                            obs_mean,
                            obs_sd,
                            eval_mean,
                            eval_sd,
                            interior_eval_mean,
                        }
                    })
                    .collect();
                for (rep, o) in &done {
                    for (k, &estimator) in cfg.estimators.iter().enumerate() {
                        timings.push(TimingRecord { d, n, m_target, rep: *rep, estimator, seconds: o.scores[k].3 });
                    }
                }
                cells.push(CellReport {
                    d,
                    n,
                    m_target,
                    m: counts.iter().product(),
                    grid_counts: counts,
                    reps: cfg.reps,
                    complete: failures.is_empty(),
                    rep_seeds: seeds.clone(),
                    bandwidths: done.iter().map(|(_, o)| o.bandwidth.clone()).collect(),
                    gamma_hat: done.iter().map(|(_, o)| o.gamma_hat.clone()).collect(),
                    estimators,
                    failures,
                });
            }
        }
    }
    Ok(ExperimentReport { header: ReportHeader::new("rmse", cfg.seed), config: cfg.clone(), cells, timings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(estimators: Vec<EstimatorKind>) -> RmseConfig {
        RmseConfig {
            kind: DgpKind::CobbDouglas { d: 1 },
            input_law: None,
            noise: NoiseLaw::AdditiveNormal { sigma: 0.3 },
            gamma: Vec::new(),
            dims: vec![1],
            n: vec![60],
            m: vec![10],
            estimators,
            reps: 3,
            seed: 5,
            kernel: Kernel::Gaussian,
            bandwidth: BandwidthRule::Loocv,
            shape: default_shape(),
            interior_trim: 0.1,
        }
    }

    #[test]
    fn report_shape_and_determinism() {
        let cfg = small(vec![EstimatorKind::Sckls, EstimatorKind::Cnls, EstimatorKind::LocalLinear]);
        let a = run_rmse_experiment(&cfg).unwrap();
        let b = run_rmse_experiment(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let cell = &a.cells[0];
        assert!(cell.complete);
        assert_eq!(cell.m, 11);
        for e in &cell.estimators {
            assert_eq!(e.obs_rmse.len(), 3);
            assert!(e.obs_rmse.iter().chain(&e.eval_rmse).all(|v| *v >= 0.0 && v.is_finite()));
        }
        assert_eq!(a.timings.len(), 9);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 10);
    }

    #[test]
    fn noiseless_pilot_is_nearly_exact() {
        // smallest admissible noise stands in for a noiseless run
        let mut cfg = small(vec![EstimatorKind::Sckls]);
        cfg.noise = NoiseLaw::AdditiveNormal { sigma: 1e-9 };
        cfg.n = vec![500];
        cfg.m = vec![50];
        cfg.reps = 1;
        let r = run_rmse_experiment(&cfg).unwrap();
        let e = r.cells[0].estimator(EstimatorKind::Sckls).unwrap();
        assert!(e.eval_mean <= 0.02, "{}", e.eval_mean);
    }

    #[test]
    fn contextual_runs_record_gamma() {
        let mut cfg = small(vec![EstimatorKind::Sckls]);
        cfg.gamma = vec![5.0];
        cfg.n = vec![200];
        let r = run_rmse_experiment(&cfg).unwrap();
        for g in &r.cells[0].gamma_hat {
            assert!((g[0] - 5.0).abs() < 0.5, "{g:?}");
        }
    }
}
