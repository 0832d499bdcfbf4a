//! Kernel functions and kernel weight matrices.
//!
//! Fixed bandwidths use a product kernel over coordinates. Variable (k-NN)
//! bandwidths apply the kernel to the Euclidean distance scaled by the
//! distance to the k-th nearest observation of each evaluation point.

mod cv;

pub use cv::{
    default_bandwidth_candidates, default_k_candidates, loocv_bandwidth, loocv_bandwidth_scores, loocv_k,
    loocv_k_scores, rule_of_thumb, CvScores, DEFAULT_CV_MULTIPLIERS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{euclidean, Matrix};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl Kernel {
    /// Univariate kernel value.
    #[inline]
    pub fn eval(self, t: f64) -> f64 {
        match self {
            Kernel::Gaussian => INV_SQRT_2PI * (-0.5 * t * t).exp(),
            Kernel::Epanechnikov => {
                if t.abs() <= 1.0 {
                    0.75 * (1.0 - t * t)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Gaussian => "gaussian",
            Kernel::Epanechnikov => "epanechnikov",
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Kernel::Gaussian),
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            other => Err(Error::InvalidParameter(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Product kernel `prod_k K(u_k)`.
pub fn product_kernel_weight(u: &[f64], kernel: Kernel) -> Result<f64> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel argument"));
    }
    Ok(u.iter().map(|&t| kernel.eval(t)).product())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthSpec {
    /// One bandwidth per input dimension.
    Fixed(Vec<f64>),
    /// Distance to the k-th nearest observation.
    Knn(usize),
}

impl BandwidthSpec {
    pub fn validate(&self, d: usize, n: usize) -> Result<()> {
        match self {
            BandwidthSpec::Fixed(h) => {
                if h.len() != d {
                    return Err(Error::Dimension(format!("bandwidth has {} entries for {d} inputs", h.len())));
                }
                if let Some(bad) = h.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidParameter(format!("bandwidths must be positive and finite, got {bad}")));
                }
            }
            BandwidthSpec::Knn(k) => {
                if *k == 0 || *k > n {
                    return Err(Error::InvalidParameter(format!("k = {k} must lie in 1..={n}")));
                }
            }
        }
        Ok(())
    }
}

/// Kernel weights of every observation at every evaluation point.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    /// m x n, row i holds the weights at evaluation point i.
    pub w: Matrix,
    /// Per-point k-NN radii when the weights came from a `Knn` bandwidth.
    pub radii: Option<Vec<f64>>,
}

impl WeightMatrix {
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.w.row(i)
    }

    pub fn n_points(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.w.ncols()
    }
}

/// k-th smallest distance from `point` to the rows of `x` (zero distances count).
pub fn knn_radius(x: &Matrix, point: &[f64], k: usize) -> f64 {
    let mut d: Vec<f64> = x.rows_iter().map(|r| euclidean(r, point)).collect();
    kth_smallest(&mut d, k)
}

pub(crate) fn kth_smallest(d: &mut [f64], k: usize) -> f64 {
    let (_, kth, _) = d.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    *kth
}

/// Scalar k-NN weight for distance `dist` at radius `radius`.
#[inline]
pub(crate) fn knn_weight(kernel: Kernel, dist: f64, radius: f64) -> f64 {
    if radius > 0.0 {
        kernel.eval(dist / radius)
    } else if dist == 0.0 {
        kernel.eval(0.0)
    } else {
        0.0
    }
}

pub fn weight_matrix(x: &Matrix, points: &Matrix, bw: &BandwidthSpec, kernel: Kernel) -> Result<WeightMatrix> {
    let d = x.ncols();
    if points.ncols() != d {
        return Err(Error::Dimension(format!("grid has {} coordinates, data has {d}", points.ncols())));
    }
    if !x.all_finite() || !points.all_finite() {
        return Err(Error::NonFinite("weight matrix inputs"));
    }
    bw.validate(d, x.nrows())?;
    let m = points.nrows();
    let n = x.nrows();
    let mut w = Matrix::zeros(m, n);
    let mut radii = None;
    match bw {
        BandwidthSpec::Fixed(h) => {
            let inv_h: Vec<f64> = h.iter().map(|v| 1.0 / v).collect();
            for i in 0..m {
                let xi = points.row(i).to_vec();
                let row = w.row_mut(i);
                for (j, wj) in row.iter_mut().enumerate() {
                    let xj = x.row(j);
                    let mut prod = 1.0;
                    for k in 0..d {
                        prod *= kernel.eval((xj[k] - xi[k]) * inv_h[k]);
                    }
                    *wj = prod;
                }
            }
        }
        BandwidthSpec::Knn(k) => {
            let mut r = Vec::with_capacity(m);
            let mut dist = vec![0.0; n];
            for i in 0..m {
                let xi = points.row(i);
                for (j, dj) in dist.iter_mut().enumerate() {
                    *dj = euclidean(x.row(j), xi);
                }
                let mut scratch = dist.clone();
                let radius = kth_smallest(&mut scratch, *k);
                let row = w.row_mut(i);
                for (wj, &dj) in row.iter_mut().zip(&dist) {
                    *wj = knn_weight(kernel, dj, radius);
                }
                r.push(radius);
            }
            radii = Some(r);
        }
    }
    for i in 0..m {
        if !(w.row(i).iter().sum::<f64>() > 0.0) {
            return Err(Error::DegenerateGrid { index: i });
        }
    }
    Ok(WeightMatrix { w, radii })
}
