//! Global affine fits: ordinary least squares and sign-constrained least squares.

use serde::{Deserialize, Serialize};

use super::Monotonicity;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SmallCholesky, SparseRow};
use crate::qp::{solve_qp, BlockDiag, QpOptions, QpProblem, QpStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl LinearFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn predict_many(&self, x: &Matrix) -> Vec<f64> {
        x.rows_iter().map(|r| self.predict(r)).collect()
    }
}

/// Gram matrix and cross products of the centred design `(1, X − x̄)`.
fn centred_moments(x: &Matrix, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (n, d) = (x.nrows(), x.ncols());
    if n != y.len() {
        return Err(Error::Dimension(format!("{n} inputs but {} outputs", y.len())));
    }
    if n < d + 1 {
        return Err(Error::InvalidParameter(format!("affine fit needs at least {} observations", d + 1)));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression data"));
    }
    let p = d + 1;
    let centre: Vec<f64> = (0..d).map(|k| x.rows_iter().map(|r| r[k]).sum::<f64>() / n as f64).collect();
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut z = vec![1.0; p];
    for (r, &yj) in x.rows_iter().zip(y) {
        for k in 0..d {
            z[k + 1] = r[k] - centre[k];
        }
        for a in 0..p {
            rhs[a] += z[a] * yj;
            for b in 0..p {
                gram[a * p + b] += z[a] * z[b];
            }
        }
    }
    Ok((gram, rhs, centre))
}

fn uncentre(theta: &[f64], centre: &[f64]) -> LinearFit {
    let slopes = theta[1..].to_vec();
    let intercept = theta[0] - slopes.iter().zip(centre).map(|(b, c)| b * c).sum::<f64>();
    LinearFit { intercept, slopes }
}

/// Unconstrained least-squares affine fit.
pub fn ols_fit(x: &Matrix, y: &[f64]) -> Result<LinearFit> {
    let (gram, mut rhs, centre) = centred_moments(x, y)?;
    let chol = SmallCholesky::factor(&gram, x.ncols() + 1)
        .ok_or_else(|| Error::Identification("inputs are collinear".into()))?;
    chol.solve_in_place(&mut rhs);
    Ok(uncentre(&rhs, &centre))
}

/// Least-squares affine fit with per-dimension slope signs.
pub fn sign_constrained_fit(x: &Matrix, y: &[f64], signs: &[Monotonicity]) -> Result<LinearFit> {
    let d = x.ncols();
    if signs.len() != d {
        return Err(Error::Dimension(format!("{} sign entries for {d} inputs", signs.len())));
    }
    let (gram, rhs, centre) = centred_moments(x, y)?;
    let mut rows = Vec::new();
    for (k, s) in signs.iter().enumerate() {
        let v = match s {
            Monotonicity::Increasing => -1.0,
            Monotonicity::Decreasing => 1.0,
            Monotonicity::Free => continue,
        };
        let mut r = SparseRow::new();
        r.push(k + 1, v);
        rows.push(r);
    }
    let c = vec![0.0; rows.len()];
    let qp = QpProblem::new(
        BlockDiag::dense(d + 1, gram.iter().map(|v| 2.0 * v).collect())?,
        rhs.iter().map(|v| -2.0 * v).collect(),
        rows,
        c,
    )?;
    let sol = solve_qp(&qp, &QpOptions::default())?;
    if sol.status == QpStatus::Infeasible {
        return Err(Error::Solver("sign-constrained fit reported infeasible".into()));
    }
    let mut theta = sol.z;
    // active sign constraints hold with equality; clear the round-off
    let tiny = 1e-9 * (1.0 + theta.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut row = 0;
    for (k, s) in signs.iter().enumerate() {
        let wrong_side = match s {
            Monotonicity::Increasing => theta[k + 1] < 0.0,
            Monotonicity::Decreasing => theta[k + 1] > 0.0,
            Monotonicity::Free => continue,
        };
        if wrong_side || (sol.dual[row] > 0.0 && theta[k + 1].abs() <= tiny) {
            theta[k + 1] = 0.0;
        }
        row += 1;
    }
    Ok(uncentre(&theta, &centre))
}

/// Least-squares affine fit with non-negative slopes.
pub fn monotone_linear_fit(x: &Matrix, y: &[f64]) -> Result<LinearFit> {
    sign_constrained_fit(x, y, &vec![Monotonicity::Increasing; x.ncols()])
}
