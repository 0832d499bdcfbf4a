//! Marginal products, rates of substitution and most productive scale size.

use serde::{Deserialize, Serialize};

use super::{Curvature, HyperplaneModel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_PERCENTILES: [f64; 5] = [10.0, 25.0, 50.0, 75.0, 90.0];

/// Linear-interpolation percentile (`q` in 0..=100) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi || v[lo] == v[hi] || frac == 0.0 {
        v[lo]
    } else {
        v[lo] + frac * (v[hi] - v[lo])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalColumn {
    /// `b1`, `b2`, ... or ratios such as `b2/b1`.
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable {
    pub percentiles: Vec<f64>,
    pub columns: Vec<MarginalColumn>,
    /// Plane chosen at each point (ties to the lowest index).
    pub active_planes: Vec<usize>,
}

/// Percentiles of each gradient coordinate and of the ratios `b_k / b_l`
/// (pairs given as `(k, l)`) at the active plane of every point. Ratios
/// whose denominator is below 1e-12 in magnitude count as `+inf`.
pub fn marginal_stats(
    model: &HyperplaneModel,
    points: Option<&Matrix>,
    percentiles: &[f64],
    ratios: &[(usize, usize)],
) -> Result<MarginalTable> {
    let d = model.dim();
    let pts = points.unwrap_or_else(|| model.grid.points());
    if pts.ncols() != d {
        return Err(Error::Dimension(format!("points have {} coordinates, model has {d}", pts.ncols())));
    }
    if let Some(&(k, l)) = ratios.iter().find(|(k, l)| *k >= d || *l >= d) {
        return Err(Error::Dimension(format!("ratio b{}/b{} with d = {d}", k + 1, l + 1)));
    }
    let active: Vec<usize> = pts.rows_iter().map(|r| model.active_plane(r)).collect();
    let mut columns = Vec::new();
    for k in 0..d {
        let vals: Vec<f64> = active.iter().map(|&i| model.b.get(i, k)).collect();
        columns.push(MarginalColumn {
            name: format!("b{}", k + 1),
            values: percentiles.iter().map(|&q| percentile(&vals, q)).collect(),
        });
    }
    for &(k, l) in ratios {
        let vals: Vec<f64> = active
            .iter()
            .map(|&i| {
                let den = model.b.get(i, l);
                if den.abs() < 1e-12 {
                    f64::INFINITY
                } else {
                    model.b.get(i, k) / den
                }
            })
            .collect();
        columns.push(MarginalColumn {
            name: format!("b{}/b{}", k + 1, l + 1),
            values: percentiles.iter().map(|&q| percentile(&vals, q)).collect(),
        });
    }
    Ok(MarginalTable { percentiles: percentiles.to_vec(), columns, active_planes: active })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mpss {
    pub t: f64,
    pub point: Vec<f64>,
    pub output: f64,
    pub average_product: f64,
}

/// Scale `t` in `t_range` maximizing `predict(t · direction) / t`. The
/// restriction to the ray is piecewise linear, so only range ends and
/// pairwise plane crossings are candidates. Ties go to the largest `t`.
pub fn mpss(model: &HyperplaneModel, direction: &[f64], t_range: (f64, f64)) -> Result<Mpss> {
    let d = model.dim();
    if direction.len() != d {
        return Err(Error::Dimension(format!("direction has {} entries, model has {d}", direction.len())));
    }
    if direction.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("direction must be strictly positive".into()));
    }
    let (lo, hi) = t_range;
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("empty or non-positive scale range [{lo}, {hi}]")));
    }
    // plane i along the ray: c_i + t s_i
    let m = model.len();
    let origin = vec![0.0; d];
    let c: Vec<f64> = (0..m).map(|i| model.plane_value(i, &origin)).collect();
    let s: Vec<f64> = (0..m).map(|i| model.b.row(i).iter().zip(direction).map(|(b, u)| b * u).sum()).collect();
    let mut cands = vec![lo, hi];
    if model.shape.curvature != Curvature::None {
        for i in 0..m {
            for l in i + 1..m {
                let ds = s[i] - s[l];
                if ds != 0.0 {
                    let t = (c[l] - c[i]) / ds;
                    if t > lo && t < hi {
                        cands.push(t);
                    }
                }
            }
        }
    }
    cands.sort_by(|a, b| a.total_cmp(b));
    cands.dedup();
    let mut best: Option<(f64, f64, f64)> = None;
    for &t in &cands {
        let x: Vec<f64> = direction.iter().map(|u| t * u).collect();
        let out = model.predict(&x);
        let ap = out / t;
        let better = match best {
            None => true,
            Some((_, _, bap)) => ap >= bap - 1e-12 * bap.abs().max(1e-300),
        };
        if better {
            best = Some((t, out, ap));
        }
    }
    let (t, output, average_product) = best.expect("candidate list is non-empty");
    Ok(Mpss { t, point: direction.iter().map(|u| t * u).collect(), output, average_product })
}
