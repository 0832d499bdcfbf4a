//! Constraint rows for hyperplane parameters `θ_i = (a_i, b_i)` stored at
//! offset `i (d + 1)`.

use rayon::prelude::*;

use super::{BoundTarget, Curvature, Monotonicity, ShapeSpec};
use crate::linalg::{Matrix, SparseRow};
use crate::qp::{LazyRow, ViolationOracle};

/// Shape constraints over a fixed set of anchor points.
pub struct ShapeConstraints<'a> {
    points: &'a Matrix,
    shape: &'a ShapeSpec,
}

impl<'a> ShapeConstraints<'a> {
    pub fn new(points: &'a Matrix, shape: &'a ShapeSpec) -> Self {
        Self { points, shape }
    }

    fn p(&self) -> usize {
        self.points.ncols() + 1
    }

    fn m(&self) -> usize {
        self.points.nrows()
    }

    /// +1 for concave, −1 for convex, 0 without curvature.
    fn sign(&self) -> f64 {
        match self.shape.curvature {
            Curvature::Concave => 1.0,
            Curvature::Convex => -1.0,
            Curvature::None => 0.0,
        }
    }

    pub fn family_size(&self) -> usize {
        if self.sign() == 0.0 {
            0
        } else {
            self.m() * (self.m() - 1)
        }
    }

    /// Sign and bound rows, always part of the problem.
    pub fn base_rows(&self) -> (Vec<SparseRow>, Vec<f64>) {
        let (p, d) = (self.p(), self.points.ncols());
        let mut rows = Vec::new();
        let mut bounds = Vec::new();
        for i in 0..self.m() {
            for (k, mono) in self.shape.monotonicity.iter().enumerate() {
                let s = match mono {
                    Monotonicity::Increasing => -1.0,
                    Monotonicity::Decreasing => 1.0,
                    Monotonicity::Free => continue,
                };
                let mut r = SparseRow::with_capacity(1);
                r.push(i * p + 1 + k, s);
                rows.push(r);
                bounds.push(0.0);
            }
            for b in &self.shape.bounds {
                let col = match b.target {
                    BoundTarget::Value => i * p,
                    BoundTarget::Gradient(k) if k < d => i * p + 1 + k,
                    BoundTarget::Gradient(_) => continue,
                };
                if let Some(lo) = b.lower {
                    let mut r = SparseRow::with_capacity(1);
                    r.push(col, -1.0);
                    rows.push(r);
                    bounds.push(-lo);
                }
                if let Some(hi) = b.upper {
                    let mut r = SparseRow::with_capacity(1);
                    r.push(col, 1.0);
                    rows.push(r);
                    bounds.push(hi);
                }
            }
        }
        (rows, bounds)
    }

    /// Row keyed `i m + l`: plane `i` lies above (concave) or below
    /// (convex) the value `a_l` at point `l`.
    pub fn afriat_row(&self, i: usize, l: usize) -> LazyRow {
        let (p, d) = (self.p(), self.points.ncols());
        let s = self.sign();
        let xi = self.points.row(i);
        let xl = self.points.row(l);
        let mut row = SparseRow::with_capacity(d + 2);
        row.push(l * p, s);
        row.push(i * p, -s);
        for k in 0..d {
            row.push(i * p + 1 + k, -s * (xl[k] - xi[k]));
        }
        LazyRow { key: (i * self.m() + l) as u64, row, bound: 0.0 }
    }

    pub fn afriat_rows(&self, pairs: &[(usize, usize)]) -> Vec<LazyRow> {
        if self.sign() == 0.0 {
            return Vec::new();
        }
        pairs.iter().filter(|(i, l)| i != l).map(|&(i, l)| self.afriat_row(i, l)).collect()
    }

    pub fn all_afriat_rows(&self) -> Vec<LazyRow> {
        let m = self.m();
        let pairs: Vec<(usize, usize)> =
            (0..m).flat_map(|i| (0..m).filter(move |&l| l != i).map(move |l| (i, l))).collect();
        self.afriat_rows(&pairs)
    }

    /// Signed violation of the Afriat row for `(i, l)`.
    #[inline]
    fn afriat_excess(&self, theta: &[f64], i: usize, l: usize) -> f64 {
        let p = self.p();
        let xi = self.points.row(i);
        let xl = self.points.row(l);
        let bi = &theta[i * p + 1..(i + 1) * p];
        let mut plane = theta[i * p];
        for k in 0..bi.len() {
            plane += bi[k] * (xl[k] - xi[k]);
        }
        self.sign() * (theta[l * p] - plane)
    }

    /// Largest violation over every base and Afriat row (≤ 0 when feasible).
    pub fn max_violation(&self, theta: &[f64]) -> f64 {
        let (rows, bounds) = self.base_rows();
        let base = rows.iter().zip(&bounds).map(|(r, b)| r.dot(theta) - b).fold(f64::NEG_INFINITY, f64::max);
        let m = self.m();
        let afriat = if self.sign() == 0.0 {
            f64::NEG_INFINITY
        } else {
            (0..m)
                .into_par_iter()
                .map(|i| {
                    (0..m)
                        .filter(|&l| l != i)
                        .map(|l| self.afriat_excess(theta, i, l))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .reduce(|| f64::NEG_INFINITY, f64::max)
        };
        base.max(afriat)
    }
}

impl ViolationOracle for ShapeConstraints<'_> {
    fn violations(&self, z: &[f64], tol: f64) -> Vec<LazyRow> {
        if self.sign() == 0.0 {
            return Vec::new();
        }
        let m = self.m();
        (0..m)
            .into_par_iter()
            .flat_map_iter(|i| {
                (0..m).filter(move |&l| l != i && self.afriat_excess(z, i, l) > tol).map(move |l| self.afriat_row(i, l))
            })
            .collect()
    }
}

/// Largest Afriat violation of planes `(a, b)` anchored at `points`.
pub fn afriat_violation(points: &Matrix, a: &[f64], b: &Matrix, curvature: Curvature) -> f64 {
    let d = points.ncols();
    let mut theta = Vec::with_capacity(a.len() * (d + 1));
    for i in 0..a.len() {
        theta.push(a[i]);
        theta.extend_from_slice(b.row(i));
    }
    let shape = ShapeSpec::new(curvature, vec![Monotonicity::Free; d]);
    let c = ShapeConstraints::new(points, &shape);
    c.max_violation(&theta).max(0.0)
}

/// Ordered pairs linking each point with its `k` nearest neighbours (both
/// directions), sorted and deduplicated.
pub(crate) fn neighbour_pairs(points: &Matrix, k: usize) -> Vec<(usize, usize)> {
    let m = points.nrows();
    let k = k.min(m.saturating_sub(1));
    let mut pairs: Vec<(usize, usize)> = (0..m)
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = points.row(i);
            let mut dist: Vec<(f64, usize)> = (0..m)
                .filter(|&l| l != i)
                .map(|l| {
                    let d: f64 = points.row(l).iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, l)
                })
                .collect();
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            dist.into_iter().take(k).flat_map(move |(_, l)| [(i, l), (l, i)])
        })
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}
