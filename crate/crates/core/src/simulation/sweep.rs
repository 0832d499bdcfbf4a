//! Observation-point RMSE of SCKLS and local linear across a bandwidth range.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rmse::{fit_estimator, EstimatorKind};
use super::{
    default_shape, fixed, gen_dgp, grid_counts, mean_sd, rep_index, rmse, self_check, DgpKind, DgpSpec, InputLaw,
    NoiseLaw, ReportHeader,
};
use crate::error::{Error, Result};
use crate::estimators::{sign_constrained_fit, LocalDesign, Monotonicity, ShapeSpec};
use crate::grid::{uniform_grid, EvalGrid};
use crate::kernel::{default_bandwidth_candidates, loocv_bandwidth, Kernel};
use crate::rng::SeedLedger;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kind: DgpKind,
    #[serde(default)]
    pub input_law: Option<InputLaw>,
    pub noise: NoiseLaw,
    pub n: usize,
    /// Target evaluation-point count.
    pub m: usize,
    /// Bandwidths to try, used in every dimension.
    pub h_values: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default = "default_shape")]
    pub shape: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub h: f64,
    pub sckls: Vec<f64>,
    pub local_linear: Vec<f64>,
    pub sckls_mean: f64,
    pub local_linear_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub header: ReportHeader,
    pub config: SweepConfig,
    pub points: Vec<SweepPoint>,
    /// Leave-one-out bandwidth of every replication.
    pub loocv_h: Vec<Vec<f64>>,
    /// RMSE at each replication's own leave-one-out bandwidth.
    pub loocv_sckls: Vec<f64>,
    pub loocv_local_linear: Vec<f64>,
    /// Replications where SCKLS is at least as accurate at the LOOCV bandwidth.
    pub loocv_sckls_wins: usize,
    /// Mean RMSE of the sign-constrained affine fit, the large-bandwidth limit.
    pub monotone_ols_mean: f64,
    /// Maximal runs of consecutive `h_values` where the SCKLS mean RMSE is
    /// no larger than the local linear one, as `[first, last]`.
    pub dominance: Vec<[f64; 2]>,
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["h", "sckls_mean", "local_linear_mean"])?;
        for p in &self.points {
            w.write_record([p.h.to_string(), p.sckls_mean.to_string(), p.local_linear_mean.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct RepSweep {
    curve: Vec<(f64, f64)>,
    loocv_h: Vec<f64>,
    loocv: (f64, f64),
    ols: f64,
}

fn sweep_rep(cfg: &SweepConfig, seed: u64) -> Result<RepSweep> {
    let d = cfg.kind.dim();
    let spec = DgpSpec {
        kind: cfg.kind,
        input_law: cfg.input_law.unwrap_or_else(|| cfg.kind.default_input_law()),
        noise: cfg.noise,
        n: cfg.n,
        seed,
        gamma: Vec::new(),
    };
    let data = gen_dgp(&spec)?;
    self_check(&data.g0)?;
    let shape = ShapeSpec::parse(&cfg.shape, d)?;
    let grid = uniform_grid(&data.x, &grid_counts(cfg.m, d))?;
    let obs_grid = EvalGrid::from_points(data.x.clone());
    let score = |h: Vec<f64>| -> Result<(f64, f64)> {
        let bw = fixed(h);
        let design = LocalDesign::new(&data.x, &grid, &bw, cfg.kernel)?;
        let at_obs = LocalDesign::new(&data.x, &obs_grid, &bw, cfg.kernel)?;
        let s = fit_estimator(EstimatorKind::Sckls, &design, &at_obs, &data.y, &shape)?;
        let l = fit_estimator(EstimatorKind::LocalLinear, &design, &at_obs, &data.y, &shape)?;
        Ok((rmse(&s.obs, &data.g0), rmse(&l.obs, &data.g0)))
    };
    let curve = cfg.h_values.iter().map(|&h| score(vec![h; d])).collect::<Result<Vec<_>>>()?;
    let loocv_h = loocv_bandwidth(&data.x, &data.y, &default_bandwidth_candidates(&data.x), cfg.kernel)?;
    let loocv = score(loocv_h.clone())?;
    let signs: Vec<Monotonicity> = shape.monotonicity.clone();
    let ols = sign_constrained_fit(&data.x, &data.y, &signs)?;
    Ok(RepSweep { curve, loocv_h, loocv, ols: rmse(&ols.predict_many(&data.x), &data.g0) })
}

pub fn bandwidth_sensitivity_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    if cfg.h_values.is_empty() || cfg.h_values.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
        return Err(Error::InvalidParameter("bandwidth range must be non-empty and positive".into()));
    }
    if cfg.reps == 0 {
        return Err(Error::InvalidParameter("at least one replication is required".into()));
    }
    let ledger = SeedLedger::new(cfg.seed);
    let reps: Vec<RepSweep> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| sweep_rep(cfg, ledger.child(rep_index(cfg.kind.dim(), cfg.n, r))))
        .collect::<Result<_>>()?;
    let points: Vec<SweepPoint> = cfg
        .h_values
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let sckls: Vec<f64> = reps.iter().map(|r| r.curve[k].0).collect();
            let local_linear: Vec<f64> = reps.iter().map(|r| r.curve[k].1).collect();
            SweepPoint {
                h,
                sckls_mean: mean_sd(&sckls).0,
                local_linear_mean: mean_sd(&local_linear).0,
                sckls,
                local_linear,
            }
        })
        .collect();
    let mut dominance: Vec<[f64; 2]> = Vec::new();
    let mut open = false;
    for p in &points {
        if p.sckls_mean <= p.local_linear_mean {
            match (open, dominance.last_mut()) {
                (true, Some(last)) => last[1] = p.h,
                _ => dominance.push([p.h, p.h]),
            }
            open = true;
        } else {
            open = false;
        }
    }
    let loocv_sckls: Vec<f64> = reps.iter().map(|r| r.loocv.0).collect();
    let loocv_local_linear: Vec<f64> = reps.iter().map(|r| r.loocv.1).collect();
    let ols: Vec<f64> = reps.iter().map(|r| r.ols).collect();
    Ok(SweepReport {
        header: ReportHeader::new("sweep", cfg.seed),
        config: cfg.clone(),
        loocv_sckls_wins: loocv_sckls.iter().zip(&loocv_local_linear).filter(|(s, l)| s <= l).count(),
        points,
        loocv_h: reps.iter().map(|r| r.loocv_h.clone()).collect(),
        loocv_sckls,
        loocv_local_linear,
        monotone_ols_mean: mean_sd(&ols).0,
        dominance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(h_values: Vec<f64>) -> SweepConfig {
        SweepConfig {
            kind: DgpKind::CobbDouglas { d: 1 },
            input_law: None,
            noise: NoiseLaw::AdditiveNormal { sigma: 0.5 },
            n: 80,
            m: 15,
            h_values,
            reps: 3,
            seed: 2,
            kernel: Kernel::Gaussian,
            shape: default_shape(),
        }
    }

    #[test]
    fn huge_bandwidth_approaches_monotone_ols() {
        let r = bandwidth_sensitivity_sweep(&cfg(vec![1e6])).unwrap();
        assert!((r.points[0].sckls_mean - r.monotone_ols_mean).abs() < 1e-4);
    }

    #[test]
    fn sweep_is_reproducible_and_intervals_are_ordered() {
        let c = cfg(vec![0.3, 0.6, 1.2, 2.4]);
        let a = bandwidth_sensitivity_sweep(&c).unwrap();
        assert_eq!(a, bandwidth_sensitivity_sweep(&c).unwrap());
        for iv in &a.dominance {
            assert!(iv[0] <= iv[1]);
        }
        assert_eq!(a.loocv_h.len(), 3);
    }
}
