//! Unconstrained local linear fits and the per-point weighted moments they
//! share with the constrained estimator.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::EvalGrid;
use crate::kernel::{weight_matrix, BandwidthSpec, Kernel, WeightMatrix};
use crate::linalg::{Matrix, SmallCholesky};

const REFINE_STEPS: usize = 2;

/// Kernel weights and local Gram matrices for one (data, grid, bandwidth)
/// triple. Depends on inputs only, so it is reused across responses.
#[derive(Debug, Clone)]
pub struct LocalDesign {
    pub x: Matrix,
    pub grid: EvalGrid,
    pub weights: WeightMatrix,
    pub bandwidth: BandwidthSpec,
    pub kernel: Kernel,
    /// m blocks of (d+1)^2, row-major: Σ_j w_ij z_ij z_ij' with z = (1, X_j − x_i).
    gram: Vec<f64>,
}

impl LocalDesign {
    pub fn new(x: &Matrix, grid: &EvalGrid, bw: &BandwidthSpec, kernel: Kernel) -> Result<Self> {
        let weights = weight_matrix(x, grid.points(), bw, kernel)?;
        let p = x.ncols() + 1;
        let points = grid.points();
        let gram: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut g = vec![0.0; p * p];
                let mut z = vec![1.0; p];
                let xi = points.row(i);
                for (j, &w) in weights.row(i).iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (zk, (a, c)) in z[1..].iter_mut().zip(x.row(j).iter().zip(xi)) {
                        *zk = a - c;
                    }
                    for r in 0..p {
                        let wr = w * z[r];
                        for c in 0..=r {
                            g[r * p + c] += wr * z[c];
                        }
                    }
                }
                for r in 0..p {
                    for c in r + 1..p {
                        g[r * p + c] = g[c * p + r];
                    }
                }
                g
            })
            .collect();
        Ok(Self { x: x.clone(), grid: grid.clone(), weights, bandwidth: bw.clone(), kernel, gram })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_points(&self) -> usize {
        self.grid.len()
    }

    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    /// Parameters per evaluation point.
    pub fn block(&self) -> usize {
        self.x.ncols() + 1
    }

    pub fn gram(&self, i: usize) -> &[f64] {
        let pp = self.block() * self.block();
        &self.gram[i * pp..(i + 1) * pp]
    }

    pub fn grams(&self) -> &[f64] {
        &self.gram
    }

    /// Σ_j w_ij z_ij y_j for every point, concatenated.
    pub fn cross(&self, y: &[f64]) -> Vec<f64> {
        let p = self.block();
        let points = self.grid.points();
        let mut out = vec![0.0; self.n_points() * p];
        out.par_chunks_mut(p).enumerate().for_each(|(i, v)| {
            let xi = points.row(i);
            for (j, &w) in self.weights.row(i).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let wy = w * y[j];
                v[0] += wy;
                for (k, (a, c)) in self.x.row(j).iter().zip(xi).enumerate() {
                    v[k + 1] += wy * (a - c);
                }
            }
        });
        out
    }

    /// Σ_j w_ij (y_j − a_i − (X_j − x_i)'b_i)² at point `i` for parameters `theta_i`.
    pub fn point_objective(&self, i: usize, theta: &[f64], y: &[f64]) -> f64 {
        let xi = self.grid.points().row(i);
        let mut total = 0.0;
        for (j, &w) in self.weights.row(i).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let mut fit = theta[0];
            for (k, (a, c)) in self.x.row(j).iter().zip(xi).enumerate() {
                fit += (a - c) * theta[k + 1];
            }
            let r = y[j] - fit;
            total += w * r * r;
        }
        total
    }

    /// Weighted residual sum over all points; `theta` holds m blocks.
    pub fn objective(&self, theta: &[f64], y: &[f64]) -> f64 {
        let p = self.block();
        (0..self.n_points()).map(|i| self.point_objective(i, &theta[i * p..(i + 1) * p], y)).sum()
    }

    /// Per-point weighted least squares; `ridge` is added to the Gram diagonal
    /// except the intercept entry.
    pub fn solve_local(&self, y: &[f64], ridge: f64) -> Result<Vec<f64>> {
        if y.len() != self.n_obs() {
            return Err(Error::Dimension(format!("{} responses for {} inputs", y.len(), self.n_obs())));
        }
        let p = self.block();
        let mut theta = self.cross(y);
        theta.par_chunks_mut(p).enumerate().try_for_each(|(i, v)| {
            let mut g = self.gram(i).to_vec();
            for k in 1..p {
                g[k * p + k] += ridge;
            }
            let chol = SmallCholesky::factor(&g, p).ok_or(Error::SingularLocalDesign { index: i })?;
            chol.solve_in_place(v);
            // Far from the data the Gram matrix is badly conditioned; refine
            // against residuals taken from the data rather than the Gram.
            let xi = self.grid.points().row(i);
            let mut r = vec![0.0; p];
            for _ in 0..REFINE_STEPS {
                r.iter_mut().for_each(|e| *e = 0.0);
                for (j, &w) in self.weights.row(i).iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let xj = self.x.row(j);
                    let mut fit = v[0];
                    for k in 1..p {
                        fit += (xj[k - 1] - xi[k - 1]) * v[k];
                    }
                    let wr = w * (y[j] - fit);
                    r[0] += wr;
                    for k in 1..p {
                        r[k] += wr * (xj[k - 1] - xi[k - 1]);
                    }
                }
                for k in 1..p {
                    r[k] -= ridge * v[k];
                }
                chol.solve_in_place(&mut r);
                v.iter_mut().zip(&r).for_each(|(a, d)| *a += d);
            }
            Ok::<(), Error>(())
        })?;
        Ok(theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalLinearFit {
    pub grid: EvalGrid,
    pub a: Vec<f64>,
    /// m x d gradients.
    pub b: Matrix,
    /// Weighted residual sum at each evaluation point.
    pub contributions: Vec<f64>,
}

impl LocalLinearFit {
    pub(crate) fn from_theta(design: &LocalDesign, theta: &[f64], y: &[f64]) -> Self {
        let p = design.block();
        let m = design.n_points();
        let a = (0..m).map(|i| theta[i * p]).collect();
        let mut b = Matrix::zeros(m, p - 1);
        for i in 0..m {
            b.row_mut(i).copy_from_slice(&theta[i * p + 1..(i + 1) * p]);
        }
        let contributions = (0..m).map(|i| design.point_objective(i, &theta[i * p..(i + 1) * p], y)).collect();
        Self { grid: design.grid.clone(), a, b, contributions }
    }

    pub fn objective(&self) -> f64 {
        self.contributions.iter().sum()
    }
}

fn check_xy(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} inputs but {} outputs", x.nrows(), y.len())));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression data"));
    }
    Ok(())
}

pub fn local_linear_fit(
    x: &Matrix,
    y: &[f64],
    grid: &EvalGrid,
    bw: &BandwidthSpec,
    kernel: Kernel,
) -> Result<LocalLinearFit> {
    local_linear_fit_ridge(x, y, grid, bw, kernel, 0.0)
}

pub fn local_linear_fit_ridge(
    x: &Matrix,
    y: &[f64],
    grid: &EvalGrid,
    bw: &BandwidthSpec,
    kernel: Kernel,
    ridge: f64,
) -> Result<LocalLinearFit> {
    check_xy(x, y)?;
    let design = LocalDesign::new(x, grid, bw, kernel)?;
    let theta = design.solve_local(y, ridge)?;
    Ok(LocalLinearFit::from_theta(&design, &theta, y))
}
