//! Two-stage estimation of `y = Z'γ + g(X) + ε`: residualize `y` and `Z` on
//! `X` with local linear conditional means, regress for `γ`, then fit the
//! shape-constrained frontier to `y − Z'γ̂`.

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::estimators::{sckls_fit, HyperplaneModel, LocalDesign, ShapeSpec};
use crate::grid::EvalGrid;
use crate::kernel::{default_bandwidth_candidates, loocv_bandwidth, BandwidthSpec, Kernel};
use crate::linalg::{Matrix, SmallCholesky};

/// Normal quantile for two-sided 95% bounds.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualFit {
    pub gamma: Vec<f64>,
    /// l x l heteroskedasticity-robust covariance.
    pub cov: Matrix,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `y − Z'γ̂`.
    pub adjusted_y: Vec<f64>,
    /// Conditional-mean bandwidths, response first, then each column of `Z`.
    pub conditional_bandwidths: Vec<BandwidthSpec>,
    /// True when some conditional-mean fit needed the ridge fallback.
    pub ridge_fallback: bool,
}

impl ContextualFit {
    fn empty(y: &[f64]) -> Self {
        Self {
            gamma: Vec::new(),
            cov: Matrix::zeros(0, 0),
            std_errors: Vec::new(),
            p_values: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            adjusted_y: y.to_vec(),
            conditional_bandwidths: Vec::new(),
            ridge_fallback: false,
        }
    }
}

/// `v − Ê[v | X]` at the observations, plus whether ridge was needed.
fn residualize_column(design: &LocalDesign, v: &[f64]) -> Result<(Vec<f64>, bool)> {
    let p = design.block();
    let (theta, ridged) = match design.solve_local(v, 0.0) {
        Ok(t) => (t, false),
        Err(Error::SingularLocalDesign { index }) => {
            let trace_max = (0..design.n_points())
                .map(|i| (0..p).map(|k| design.gram(i)[k * p + k]).sum::<f64>())
                .fold(0.0f64, f64::max);
            let ridge = 1e-8 * trace_max.max(f64::MIN_POSITIVE);
            warn!("local design singular at observation {index}; using ridge {ridge:e}");
            (design.solve_local(v, ridge)?, true)
        }
        Err(e) => return Err(e),
    };
    Ok((v.iter().enumerate().map(|(j, vj)| vj - theta[j * p]).collect(), ridged))
}

/// Weight of each observation in its own fitted conditional mean, the
/// diagonal of the local linear smoother at the observations.
pub fn own_leverage(design: &LocalDesign) -> Vec<f64> {
    let p = design.block();
    (0..design.n_points())
        .map(|j| match SmallCholesky::factor(design.gram(j), p) {
            Some(chol) => {
                let mut e = vec![0.0; p];
                e[0] = 1.0;
                chol.solve_in_place(&mut e);
                design.weights.row(j)[j] * e[0]
            }
            None => 0.0,
        })
        .collect()
}

fn observation_design(x: &Matrix, bw: &BandwidthSpec, kernel: Kernel) -> Result<LocalDesign> {
    LocalDesign::new(x, &EvalGrid::from_points(x.clone()), bw, kernel)
}

/// Columns of `v` minus their local linear conditional means given `x`,
/// evaluated at the observations.
pub fn residualize(v: &Matrix, x: &Matrix, bw: &BandwidthSpec, kernel: Kernel) -> Result<Matrix> {
    if v.nrows() != x.nrows() {
        return Err(Error::Dimension(format!("{} rows to residualize for {} inputs", v.nrows(), x.nrows())));
    }
    if !v.all_finite() || !x.all_finite() {
        return Err(Error::NonFinite("residualization data"));
    }
    let design = observation_design(x, bw, kernel)?;
    let mut out = Matrix::zeros(v.nrows(), v.ncols());
    for k in 0..v.ncols() {
        let (r, _) = residualize_column(&design, &v.column_values(k))?;
        for (j, rj) in r.into_iter().enumerate() {
            out.set(j, k, rj);
        }
    }
    Ok(out)
}

/// `γ̂` with one shared conditional-mean bandwidth.
pub fn estimate_gamma(z: &Matrix, y: &[f64], x: &Matrix, bw: &BandwidthSpec, kernel: Kernel) -> Result<ContextualFit> {
    estimate_gamma_with(z, y, x, &vec![bw.clone(); z.ncols() + 1], kernel)
}

/// `γ̂` with a bandwidth per conditional mean (`y` first, then `Z` columns).
pub fn estimate_gamma_with(
    z: &Matrix,
    y: &[f64],
    x: &Matrix,
    bws: &[BandwidthSpec],
    kernel: Kernel,
) -> Result<ContextualFit> {
    let (n, l) = (x.nrows(), z.ncols());
    if y.len() != n || z.nrows() != n {
        return Err(Error::Dimension(format!("{n} inputs, {} responses, {} contextual rows", y.len(), z.nrows())));
    }
    if bws.len() != l + 1 {
        return Err(Error::Dimension(format!("{} bandwidths for {} conditional means", bws.len(), l + 1)));
    }
    if !z.all_finite() || !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("contextual regression data"));
    }
    if l == 0 {
        return Ok(ContextualFit::empty(y));
    }
    let mut ridge_fallback = false;
    let mut designs: Vec<(BandwidthSpec, LocalDesign)> = Vec::new();
    let mut resid = |v: &[f64], bw: &BandwidthSpec| -> Result<Vec<f64>> {
        let pos = match designs.iter().position(|(b, _)| b == bw) {
            Some(p) => p,
            None => {
                designs.push((bw.clone(), observation_design(x, bw, kernel)?));
                designs.len() - 1
            }
        };
        let (r, ridged) = residualize_column(&designs[pos].1, v)?;
        ridge_fallback |= ridged;
        Ok(r)
    };
    let y_t = resid(y, &bws[0])?;
    let mut zt = Vec::with_capacity(l);
    for k in 0..l {
        let col = z.column_values(k);
        let r = resid(&col, &bws[k + 1])?;
        let raw: f64 = col.iter().map(|v| v * v).sum();
        let left: f64 = r.iter().map(|v| v * v).sum();
        if !(left > 1e-10 * raw) {
            return Err(Error::Identification(format!(
                "contextual column {} is (nearly) a function of the inputs, so its effect cannot be separated from the frontier",
                k + 1
            )));
        }
        zt.push(r);
    }
    let mut a = vec![0.0; l * l];
    let mut c = vec![0.0; l];
    for j in 0..n {
        for r in 0..l {
            c[r] += zt[r][j] * y_t[j];
            for s in 0..l {
                a[r * l + s] += zt[r][j] * zt[s][j];
            }
        }
    }
    let chol = SmallCholesky::factor(&a, l).ok_or_else(|| {
        Error::Identification(
            "residualized contextual variables are collinear; some combination is a function of the inputs".into(),
        )
    })?;
    let mut gamma = c;
    chol.solve_in_place(&mut gamma);

    // Residuals shrink by the own weight of the response smoother; undo it
    // so the variance is not understated at small bandwidths.
    let leverage = own_leverage(&designs[0].1);
    let mut meat = vec![0.0; l * l];
    for j in 0..n {
        let e = (y_t[j] - (0..l).map(|r| zt[r][j] * gamma[r]).sum::<f64>()) / (1.0 - leverage[j]).max(1e-3);
        for r in 0..l {
            for s in 0..l {
                meat[r * l + s] += zt[r][j] * zt[s][j] * e * e;
            }
        }
    }
    // A^{-1} M A^{-1}, column by column
    let mut a_inv = vec![0.0; l * l];
    for col in 0..l {
        let mut e = vec![0.0; l];
        e[col] = 1.0;
        chol.solve_in_place(&mut e);
        for r in 0..l {
            a_inv[r * l + col] = e[r];
        }
    }
    let mut cov = Matrix::zeros(l, l);
    for r in 0..l {
        for s in 0..l {
            let mut v = 0.0;
            for u in 0..l {
                for w in 0..l {
                    v += a_inv[r * l + u] * meat[u * l + w] * a_inv[w * l + s];
                }
            }
            cov.set(r, s, v);
        }
    }
    let std_errors: Vec<f64> = (0..l).map(|k| cov.get(k, k).max(0.0).sqrt()).collect();
    let p_values = gamma
        .iter()
        .zip(&std_errors)
        .map(|(g, se)| {
            if *se > 0.0 {
                erfc((g / se).abs() / std::f64::consts::SQRT_2)
            } else if *g == 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let lower = gamma.iter().zip(&std_errors).map(|(g, se)| g - Z_95 * se).collect();
    let upper = gamma.iter().zip(&std_errors).map(|(g, se)| g + Z_95 * se).collect();
    let adjusted_y: Vec<f64> =
        (0..n).map(|j| y[j] - z.row(j).iter().zip(&gamma).map(|(a, b)| a * b).sum::<f64>()).collect();
    if adjusted_y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("adjusted responses"));
    }
    Ok(ContextualFit {
        gamma,
        cov,
        std_errors,
        p_values,
        lower,
        upper,
        adjusted_y,
        conditional_bandwidths: bws.to_vec(),
        ridge_fallback,
    })
}

/// Independent leave-one-out bandwidth for each conditional mean.
pub fn conditional_bandwidths(x: &Matrix, y: &[f64], z: &Matrix, kernel: Kernel) -> Result<Vec<BandwidthSpec>> {
    let cands = default_bandwidth_candidates(x);
    let mut out = vec![BandwidthSpec::Fixed(loocv_bandwidth(x, y, &cands, kernel)?)];
    for k in 0..z.ncols() {
        let col = z.column_values(k);
        out.push(BandwidthSpec::Fixed(loocv_bandwidth(x, &col, &cands, kernel)?));
    }
    Ok(out)
}

/// Stage one on `(X, y, Z)`, then SCKLS with bandwidth `bw` on the adjusted
/// response. With no contextual columns this is exactly `sckls_fit`.
pub fn fit_partially_linear(
    x: &Matrix,
    y: &[f64],
    z: &Matrix,
    grid: &EvalGrid,
    bw: &BandwidthSpec,
    kernel: Kernel,
    shape: &ShapeSpec,
) -> Result<(ContextualFit, HyperplaneModel)> {
    if z.nrows() != x.nrows() {
        return Err(Error::Dimension(format!("{} contextual rows for {} inputs", z.nrows(), x.nrows())));
    }
    let ctx = if z.ncols() == 0 {
        ContextualFit::empty(y)
    } else {
        let bws = conditional_bandwidths(x, y, z, kernel)?;
        estimate_gamma_with(z, y, x, &bws, kernel)?
    };
    let model = sckls_fit(x, &ctx.adjusted_y, grid, bw, kernel, shape, true)?;
    Ok((ctx, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::uniform_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn sample(n: usize, d: usize, seed: u64) -> (Matrix, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap();
        (x, rng)
    }

    /// Weighted least squares at one point by Gaussian elimination.
    fn oracle_intercept(x: &Matrix, v: &[f64], at: &[f64], h: f64) -> f64 {
        let d = x.ncols();
        let p = d + 1;
        let mut a = vec![vec![0.0; p + 1]; p];
        for (r, vj) in x.rows_iter().zip(v) {
            let w: f64 = r.iter().zip(at).map(|(a, b)| (-0.5 * ((a - b) / h).powi(2)).exp()).product();
            let mut z = vec![1.0];
            z.extend(r.iter().zip(at).map(|(a, b)| a - b));
            for i in 0..p {
                for k in 0..p {
                    a[i][k] += w * z[i] * z[k];
                }
                a[i][p] += w * z[i] * vj;
            }
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&i, &k| a[i][c].abs().total_cmp(&a[k][c].abs())).unwrap();
            a.swap(c, piv);
            for i in 0..p {
                if i != c {
                    let f = a[i][c] / a[c][c];
                    for k in c..=p {
                        a[i][k] -= f * a[c][k];
                    }
                }
            }
        }
        a[0][p] / a[0][0]
    }

    #[test]
    fn residualize_matches_pointwise_oracle() {
        let (x, mut rng) = sample(200, 1, 1);
        let v: Vec<f64> =
            x.as_slice().iter().map(|t| (3.0 * t).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let r = residualize(&Matrix::column(&v), &x, &BandwidthSpec::Fixed(vec![0.15]), Kernel::Gaussian).unwrap();
        for j in 0..200 {
            let want = v[j] - oracle_intercept(&x, &v, x.row(j), 0.15);
            assert!((r.get(j, 0) - want).abs() < 1e-8, "{j}");
        }
    }

    #[test]
    fn leverage_is_smoother_diagonal() {
        // the fitted value at x_j of the unit response e_j is the j-th diagonal entry
        let (x, _) = sample(80, 1, 9);
        let design = observation_design(&x, &BandwidthSpec::Fixed(vec![0.1]), Kernel::Gaussian).unwrap();
        let lev = own_leverage(&design);
        for j in (0..80).step_by(7) {
            let mut e = vec![0.0; 80];
            e[j] = 1.0;
            assert!((lev[j] - oracle_intercept(&x, &e, x.row(j), 0.1)).abs() < 1e-10, "{j}");
        }
    }

    #[test]
    fn constants_and_affine_functions_annihilated() {
        let (x, _) = sample(150, 2, 2);
        let bw = BandwidthSpec::Fixed(vec![0.2, 0.2]);
        let mut v = Matrix::zeros(150, 2);
        for j in 0..150 {
            v.set(j, 0, 3.0);
            v.set(j, 1, 1.0 + 2.0 * x.get(j, 0) - x.get(j, 1));
        }
        let r = residualize(&v, &x, &bw, Kernel::Gaussian).unwrap();
        assert!(r.as_slice().iter().all(|e| e.abs() < 1e-8));
    }

    fn contextual_sample(n: usize, seed: u64, noise: f64) -> (Matrix, Matrix, Vec<f64>) {
        let (x, mut rng) = sample(n, 1, seed);
        let z = Matrix::from_vec(n, 1, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y = (0..n)
            .map(|j| 5.0 * z.get(j, 0) + x.get(j, 0).sqrt() + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, z, y)
    }

    #[test]
    fn exact_contextual_effect_recovered() {
        let (x, mut rng) = sample(500, 1, 3);
        let z = Matrix::from_vec(500, 1, (0..500).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y: Vec<f64> = z.as_slice().iter().map(|v| 5.0 * v).collect();
        let fit = estimate_gamma(&z, &y, &x, &BandwidthSpec::Fixed(vec![0.1]), Kernel::Gaussian).unwrap();
        assert!((fit.gamma[0] - 5.0).abs() < 1e-2, "{}", fit.gamma[0]);
    }

    #[test]
    fn bounds_follow_standard_errors() {
        let (x, z, y) = contextual_sample(300, 4, 0.5);
        let fit = estimate_gamma(&z, &y, &x, &BandwidthSpec::Fixed(vec![0.1]), Kernel::Gaussian).unwrap();
        let se = fit.cov.get(0, 0).sqrt();
        assert!((fit.lower[0] - (fit.gamma[0] - 1.96 * se)).abs() < 1e-12);
        assert!((fit.upper[0] - (fit.gamma[0] + 1.96 * se)).abs() < 1e-12);
        assert!(fit.p_values[0] < 1e-6);
        assert!(fit.adjusted_y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn scaling_a_column_rescales_its_coefficient() {
        let (x, z, y) = contextual_sample(200, 5, 0.3);
        let bw = BandwidthSpec::Fixed(vec![0.12]);
        let a = estimate_gamma(&z, &y, &x, &bw, Kernel::Gaussian).unwrap();
        let b = estimate_gamma(&z.scaled(4.0), &y, &x, &bw, Kernel::Gaussian).unwrap();
        assert_eq!(b.gamma[0], a.gamma[0] / 4.0);
    }

    #[test]
    fn empty_contextual_set_is_plain_sckls() {
        let (x, _, y) = contextual_sample(60, 6, 0.1);
        let grid = uniform_grid(&x, &[6]).unwrap();
        let bw = BandwidthSpec::Fixed(vec![0.2]);
        let shape = ShapeSpec::concave_increasing(1);
        let (ctx, model) =
            fit_partially_linear(&x, &y, &Matrix::zeros(60, 0), &grid, &bw, Kernel::Gaussian, &shape).unwrap();
        assert!(ctx.gamma.is_empty());
        assert_eq!(ctx.adjusted_y, y);
        let direct = sckls_fit(&x, &y, &grid, &bw, Kernel::Gaussian, &shape, true).unwrap();
        assert_eq!(serde_json::to_string(&model).unwrap(), serde_json::to_string(&direct).unwrap());
    }

    #[test]
    fn unidentified_contextual_variables_rejected() {
        let (x, _, y) = contextual_sample(80, 7, 0.1);
        let bw = BandwidthSpec::Fixed(vec![0.2]);
        let zero = Matrix::zeros(80, 1);
        assert!(matches!(estimate_gamma(&zero, &y, &x, &bw, Kernel::Gaussian), Err(Error::Identification(_))));
        let affine = Matrix::column(&x.as_slice().iter().map(|v| 2.0 * v + 1.0).collect::<Vec<_>>());
        assert!(matches!(estimate_gamma(&affine, &y, &x, &bw, Kernel::Gaussian), Err(Error::Identification(_))));
        let (_, z, _) = contextual_sample(80, 8, 0.1);
        let mut dup = Matrix::zeros(80, 2);
        for j in 0..80 {
            dup.set(j, 0, z.get(j, 0));
            dup.set(j, 1, z.get(j, 0));
        }
        assert!(matches!(estimate_gamma(&dup, &y, &x, &bw, Kernel::Gaussian), Err(Error::Identification(_))));
    }
}
