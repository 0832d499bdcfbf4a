//! Dense and sparse building blocks shared by the estimators and the QP solver.

use faer::linalg::solvers::SolveCore;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix. Rows are observations or evaluation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!("{} values cannot fill a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    /// Single-column matrix.
    pub fn column(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn column_values(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-column (min, max).
    pub fn column_ranges(&self) -> Vec<(f64, f64)> {
        (0..self.cols)
            .map(|j| {
                self.rows_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j])))
            })
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.rows_iter().map(<[f64]>::to_vec).collect()
    }
}

/// Sparse row of a constraint or quadratic-term matrix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self { idx: Vec::with_capacity(cap), val: Vec::with_capacity(cap) }
    }

    /// Appends an entry; zero coefficients are skipped.
    pub fn push(&mut self, i: usize, v: f64) {
        if v != 0.0 {
            self.idx.push(i);
            self.val.push(v);
        }
    }

    #[inline]
    pub fn dot(&self, z: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, v)| v * z[i]).sum()
    }

    #[inline]
    pub fn axpy_into(&self, alpha: f64, out: &mut [f64]) {
        for (&i, v) in self.idx.iter().zip(&self.val) {
            out[i] += alpha * v;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.val.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }
}

/// Cholesky factor of a small dense SPD matrix, stored row-major lower triangle.
#[derive(Debug, Clone)]
pub struct SmallCholesky {
    n: usize,
    l: Vec<f64>,
}

impl SmallCholesky {
    /// Factors `a` (row-major n x n, symmetric). Returns `None` when a pivot
    /// falls below `1e-12` of its original diagonal entry.
    pub fn factor(a: &[f64], n: usize) -> Option<Self> {
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            let scale = a[j * n + j].abs();
            if !(d > 1e-12 * scale) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Some(Self { n, l })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }
}

/// Dense symmetric matrix assembled for factorization; only the lower
/// triangle is read.
#[derive(Clone)]
pub struct DenseSym {
    mat: Mat<f64>,
}

impl DenseSym {
    pub fn zeros(n: usize) -> Self {
        Self { mat: Mat::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// Adds `v` at `(i, j)`, folded into the lower triangle.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.mat.col_as_slice_mut(c)[r] += v;
    }

    #[inline]
    pub fn add_diag(&mut self, i: usize, v: f64) {
        self.mat.col_as_slice_mut(i)[i] += v;
    }

    /// Adds `w * row row'` for a sparse row.
    pub fn add_outer(&mut self, row: &SparseRow, w: f64) {
        for (a, (&ia, &va)) in row.idx.iter().zip(&row.val).enumerate() {
            let wa = w * va;
            for (&ib, &vb) in row.idx[..=a].iter().zip(&row.val[..=a]) {
                let (r, c) = if ia >= ib { (ia, ib) } else { (ib, ia) };
                self.mat.col_as_slice_mut(c)[r] += wa * vb;
            }
        }
    }

    /// Adds `rel · max(h_ii, floor)` to every diagonal entry.
    pub fn add_diag_relative(&mut self, rel: f64, floor: f64) {
        for i in 0..self.dim() {
            let v = self.mat[(i, i)];
            self.mat[(i, i)] = v + rel * v.max(floor);
        }
    }

    pub fn factor(&self) -> Option<DenseCholesky> {
        let llt = self.mat.llt(Side::Lower).ok()?;
        Some(DenseCholesky::Llt(llt))
    }

    /// Cholesky in which a pivot that collapses below `1e-13` of its
    /// original diagonal is replaced by a huge value, zeroing that
    /// component of the solution instead of failing. Meant for the nearly
    /// singular systems met late in interior-point runs.
    pub fn factor_modified(&self) -> DenseCholesky {
        let n = self.dim();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            l[j * n + j..(j + 1) * n].copy_from_slice(&self.mat.col_as_slice(j)[j..]);
        }
        for j in 0..n {
            let (done, rest) = l.split_at_mut(j * n);
            let col = &mut rest[j..n];
            for k in 0..j {
                let ck = &done[k * n + j..(k + 1) * n];
                let ljk = ck[0];
                if ljk != 0.0 {
                    for (a, b) in col.iter_mut().zip(ck) {
                        *a -= ljk * b;
                    }
                }
            }
            let orig = self.mat.col_as_slice(j)[j];
            let d = col[0];
            if !(d > 1e-13 * orig.abs()) || !d.is_finite() {
                col[0] = 1e64;
                col[1..].iter_mut().for_each(|v| *v = 0.0);
            } else {
                let piv = d.sqrt();
                col[0] = piv;
                col[1..].iter_mut().for_each(|v| *v /= piv);
            }
        }
        DenseCholesky::Modified { n, l }
    }
}

pub enum DenseCholesky {
    Llt(faer::linalg::solvers::Llt<f64>),
    /// Column-major lower factor from `DenseSym::factor_modified`.
    Modified {
        n: usize,
        l: Vec<f64>,
    },
}

impl DenseCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        match self {
            DenseCholesky::Llt(llt) => {
                let mut rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
                llt.solve_in_place_with_conj(faer::Conj::No, rhs.as_mut());
                b.copy_from_slice(rhs.col_as_slice(0));
            }
            DenseCholesky::Modified { n, l } => {
                let n = *n;
                for j in 0..n {
                    let col = &l[j * n + j..(j + 1) * n];
                    b[j] /= col[0];
                    let bj = b[j];
                    for (bi, lij) in b[j + 1..].iter_mut().zip(&col[1..]) {
                        *bi -= lij * bj;
                    }
                }
                for j in (0..n).rev() {
                    let col = &l[j * n + j..(j + 1) * n];
                    let s: f64 = b[j + 1..].iter().zip(&col[1..]).map(|(x, v)| x * v).sum();
                    b[j] = (b[j] - s) / col[0];
                }
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Affine rank of a point cloud, via Gaussian elimination on differences.
pub fn affine_rank(points: &Matrix, tol: f64) -> usize {
    let n = points.nrows();
    let d = points.ncols();
    if n <= 1 {
        return 0;
    }
    let base = points.row(0);
    let mut rows: Vec<Vec<f64>> =
        (1..n).map(|i| points.row(i).iter().zip(base).map(|(a, b)| a - b).collect()).collect();
    let scale = rows.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut rank = 0;
    for col in 0..d {
        let pivot = (rank..rows.len())
            .max_by(|&a, &b| rows[a][col].abs().partial_cmp(&rows[b][col].abs()).unwrap_or(std::cmp::Ordering::Equal));
        let Some(p) = pivot else { break };
        if rows[p][col].abs() <= tol * scale {
            continue;
        }
        rows.swap(rank, p);
        let pr = rows[rank].clone();
        for r in rows.iter_mut().skip(rank + 1) {
            let f = r[col] / pr[col];
            if f != 0.0 {
                for (x, y) in r.iter_mut().zip(&pr) {
                    *x -= f * y;
                }
            }
        }
        rank += 1;
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cholesky_solves_spd_system() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let f = SmallCholesky::factor(&a, 2).unwrap();
        let mut b = [2.0, 1.0];
        f.solve_in_place(&mut b);
        assert!((4.0 * b[0] + 2.0 * b[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * b[0] + 3.0 * b[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn small_cholesky_rejects_singular() {
        assert!(SmallCholesky::factor(&[1.0, 1.0, 1.0, 1.0], 2).is_none());
        assert!(SmallCholesky::factor(&[1.0, 0.0, 0.0, 0.0], 2).is_none());
    }

    #[test]
    fn dense_cholesky_matches_small() {
        let mut h = DenseSym::zeros(3);
        let a = [5.0, 1.0, 0.5, 1.0, 4.0, 0.2, 0.5, 0.2, 3.0];
        for i in 0..3 {
            for j in 0..=i {
                h.add(i, j, a[i * 3 + j]);
            }
        }
        let mut b1 = [1.0, 2.0, 3.0];
        let mut b2 = b1;
        h.factor().unwrap().solve_in_place(&mut b1);
        SmallCholesky::factor(&a, 3).unwrap().solve_in_place(&mut b2);
        for (x, y) in b1.iter().zip(&b2) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn modified_cholesky_handles_singular_matrix() {
        // rank-one matrix: the second pivot collapses and its component is dropped
        let mut h = DenseSym::zeros(2);
        h.add(0, 0, 1.0);
        h.add(1, 0, 1.0);
        h.add(1, 1, 1.0);
        assert!(h.factor().is_none());
        let f = h.factor_modified();
        let mut b = [2.0, 2.0];
        f.solve_in_place(&mut b);
        assert!((b[0] + b[1] - 2.0).abs() < 1e-12);
        // on a well-conditioned matrix it agrees with the library factor
        let mut h = DenseSym::zeros(2);
        h.add(0, 0, 4.0);
        h.add(1, 0, 2.0);
        h.add(1, 1, 3.0);
        let (mut b1, mut b2) = ([1.0, -1.0], [1.0, -1.0]);
        h.factor().unwrap().solve_in_place(&mut b1);
        h.factor_modified().solve_in_place(&mut b2);
        assert!((b1[0] - b2[0]).abs() < 1e-14 && (b1[1] - b2[1]).abs() < 1e-14);
    }

    #[test]
    fn affine_rank_of_collinear_points() {
        let m = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).unwrap();
        assert_eq!(affine_rank(&m, 1e-12), 1);
        let m = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(affine_rank(&m, 1e-12), 2);
    }
}
