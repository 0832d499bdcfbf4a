//! Convex nonparametric least squares: one hyperplane per distinct input.

use super::constraints::neighbour_pairs;
use super::sckls::{solve_shape_problem, split_theta};
use rayon::prelude::*;

use super::{Curvature, HyperplaneModel, Monotonicity, ShapeSpec};
use crate::error::{Error, Result};
use crate::grid::EvalGrid;
use crate::linalg::{norm_inf, Matrix, SparseRow};
use crate::qp::{solve_qp, BlockDiag, LazyOptions, QpOptions, QpProblem, QpStatus};

/// Distinct rows of `x` in lexicographic order with counts and mean responses,
/// plus the group of every observation.
fn merge_duplicates(x: &Matrix, y: &[f64]) -> (Matrix, Vec<f64>, Vec<f64>, Vec<usize>) {
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let cmp = |a: usize, b: usize| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    order.sort_by(|&a, &b| cmp(a, b).then(a.cmp(&b)));
    let mut rows: Vec<usize> = Vec::new();
    let mut weight = Vec::new();
    let mut ysum = Vec::new();
    let mut group = vec![0; n];
    for &j in &order {
        let same = rows.last().is_some_and(|&r| cmp(r, j).is_eq());
        if !same {
            rows.push(j);
            weight.push(0.0);
            ysum.push(0.0);
        }
        let g = rows.len() - 1;
        weight[g] += 1.0;
        ysum[g] += y[j];
        group[j] = g;
    }
    let ybar = ysum.iter().zip(&weight).map(|(s, w)| s / w).collect();
    (x.select_rows(&rows), weight, ybar, group)
}

pub fn cnls_fit(x: &Matrix, y: &[f64], shape: &ShapeSpec) -> Result<HyperplaneModel> {
    cnls_fit_with(x, y, shape, &LazyOptions::default())
}

pub fn cnls_fit_with(x: &Matrix, y: &[f64], shape: &ShapeSpec, opts: &LazyOptions) -> Result<HyperplaneModel> {
    let d = x.ncols();
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} inputs but {} outputs", x.nrows(), y.len())));
    }
    if x.nrows() < 2 {
        return Err(Error::InvalidParameter("at least two observations are required".into()));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression data"));
    }
    shape.check(d)?;
    let (points, weight, ybar, group) = merge_duplicates(x, y);
    let m = points.nrows();
    let p = d + 1;
    let mut blocks = vec![0.0; m * p * p];
    let mut q = vec![0.0; m * p];
    for j in 0..m {
        blocks[j * p * p] = 2.0 * weight[j];
        q[j * p] = -2.0 * weight[j] * ybar[j];
    }
    let seeds = neighbour_pairs(&points, 2 * d);
    let (theta, mut diag) =
        solve_shape_problem(&points, &seeds, BlockDiag::new(p, blocks)?, q, shape, true, opts, 1.0 + norm_inf(y))?;
    diag.objective = y.iter().zip(&group).map(|(yj, &g)| (yj - theta[g * p]).powi(2)).sum();
    let (a, b) = split_theta(&theta, m, d);
    Ok(HyperplaneModel {
        grid: EvalGrid::from_points(points),
        a,
        b,
        shape: shape.clone(),
        bandwidth: None,
        kernel: None,
        diagnostics: diag,
    })
}

/// Second stage for extrapolation. Gradients at the edge of the data are not
/// pinned down by the fit; this replaces every gradient by the smallest one
/// whose plane still supports all fitted values (within `1e-7` of the value
/// scale) and keeps the monotone signs. Fitted values are unchanged.
pub fn min_norm_gradients(model: &HyperplaneModel) -> Result<HyperplaneModel> {
    let shape = &model.shape;
    if shape.curvature == Curvature::None {
        return Ok(model.clone());
    }
    let points = model.grid.points();
    let (m, d) = (model.len(), model.dim());
    let slack = 1e-7 * (1.0 + norm_inf(&model.a));
    let sign = if shape.curvature == Curvature::Concave { -1.0 } else { 1.0 };
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let xj = points.row(j);
            let mut g = Vec::with_capacity(m + d);
            let mut c = Vec::with_capacity(m + d);
            for l in (0..m).filter(|&l| l != j) {
                // concave: a_j + b'(x_l − x_j) >= a_l; convex: the reverse
                let mut r = SparseRow::with_capacity(d);
                for (k, (u, v)) in points.row(l).iter().zip(xj).enumerate() {
                    r.push(k, sign * (u - v));
                }
                g.push(r);
                c.push(sign * (model.a[l] - model.a[j]) + slack);
            }
            for (k, mono) in shape.monotonicity.iter().enumerate() {
                let v = match mono {
                    Monotonicity::Increasing => -1.0,
                    Monotonicity::Decreasing => 1.0,
                    Monotonicity::Free => continue,
                };
                let mut r = SparseRow::new();
                r.push(k, v);
                g.push(r);
                c.push(0.0);
            }
            let mut eye = vec![0.0; d * d];
            for k in 0..d {
                eye[k * d + k] = 2.0;
            }
            let fallback = model.b.row(j).to_vec();
            let qp = match BlockDiag::dense(d, eye).and_then(|p| QpProblem::new(p, vec![0.0; d], g, c)) {
                Ok(qp) => qp,
                Err(_) => return fallback,
            };
            match solve_qp(&qp, &QpOptions::default()) {
                Ok(sol) if sol.status == QpStatus::Optimal => sol.z,
                _ => fallback,
            }
        })
        .collect();
    let mut out = model.clone();
    for (j, b) in rows.into_iter().enumerate() {
        out.b.row_mut(j).copy_from_slice(&b);
    }
    Ok(out)
}
