//! Leave-one-out cross-validation of the unconstrained local linear fit.

use rayon::prelude::*;

use super::{knn_weight, kth_smallest, Kernel};
use crate::error::{Error, Result};
use crate::linalg::{euclidean, sample_sd, Matrix, SmallCholesky};

/// Multipliers of the rule-of-thumb bandwidth searched by default:
/// 16 log-spaced values spanning [0.25, 4].
pub const DEFAULT_CV_MULTIPLIERS: usize = 16;

const RULE_OF_THUMB_CONSTANT: f64 = 1.06;

/// Scores of every candidate plus the selected index.
#[derive(Debug, Clone)]
pub struct CvScores {
    pub scores: Vec<f64>,
    pub best: usize,
}

/// `c * sd(X_k) * n^(-1/(4+d))` per input dimension.
pub fn rule_of_thumb(x: &Matrix) -> Vec<f64> {
    let n = x.nrows() as f64;
    let d = x.ncols() as f64;
    let shrink = n.powf(-1.0 / (4.0 + d));
    (0..x.ncols()).map(|k| RULE_OF_THUMB_CONSTANT * sample_sd(&x.column_values(k)) * shrink).collect()
}

/// Rule-of-thumb vector scaled by log-spaced multipliers in [0.25, 4], ascending.
pub fn default_bandwidth_candidates(x: &Matrix) -> Vec<Vec<f64>> {
    let base = rule_of_thumb(x);
    let count = DEFAULT_CV_MULTIPLIERS;
    (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            let mult = 0.25f64 * 16f64.powf(t);
            base.iter().map(|h| h * mult).collect()
        })
        .collect()
}

/// Log-spaced neighbour counts from `d + 2` to roughly `n / 2`.
pub fn default_k_candidates(n: usize, d: usize) -> Vec<usize> {
    let lo = (d + 2).min(n.saturating_sub(1)).max(1);
    let hi = (n / 2).max(lo);
    let count = 12;
    let mut ks: Vec<usize> = (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            ((lo as f64) * ((hi as f64) / (lo as f64)).powf(t)).round() as usize
        })
        .collect();
    ks.dedup();
    ks
}

/// Intercept of the weighted local linear fit centred at `center`, skipping
/// observation `skip`. `None` when the local design is singular.
fn loo_prediction(x: &Matrix, y: &[f64], center: &[f64], skip: usize, weight: impl Fn(usize) -> f64) -> Option<f64> {
    let d = x.ncols();
    let p = d + 1;
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut z = vec![0.0; p];
    z[0] = 1.0;
    for l in 0..x.nrows() {
        if l == skip {
            continue;
        }
        let w = weight(l);
        if w == 0.0 {
            continue;
        }
        for (zk, (xl, c)) in z[1..].iter_mut().zip(x.row(l).iter().zip(center)) {
            *zk = xl - c;
        }
        for a in 0..p {
            let wa = w * z[a];
            rhs[a] += wa * y[l];
            for b in 0..=a {
                gram[a * p + b] += wa * z[b];
            }
        }
    }
    for a in 0..p {
        for b in a + 1..p {
            gram[a * p + b] = gram[b * p + a];
        }
    }
    let chol = SmallCholesky::factor(&gram, p)?;
    chol.solve_in_place(&mut rhs);
    Some(rhs[0])
}

fn pick_best(scores: &[f64], norms: &[f64], y: &[f64]) -> usize {
    let scale = 1.0 + y.iter().map(|v| v * v).sum::<f64>();
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let tie = 1e-12 * scale;
    let mut best = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && s <= min + tie {
            best = match best {
                None => Some(i),
                Some(b) if norms[i] < norms[b] => Some(i),
                keep => keep,
            };
        }
    }
    best.unwrap_or(0)
}

fn check_inputs(x: &Matrix, y: &[f64], n_candidates: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} inputs but {} outputs", x.nrows(), y.len())));
    }
    if x.nrows() < x.ncols() + 2 {
        return Err(Error::InvalidParameter(format!(
            "cross-validation needs at least d + 2 = {} observations",
            x.ncols() + 2
        )));
    }
    if n_candidates == 0 {
        return Err(Error::InvalidParameter("empty candidate list".into()));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cross-validation data"));
    }
    Ok(())
}

pub fn loocv_bandwidth_scores(x: &Matrix, y: &[f64], candidates: &[Vec<f64>], kernel: Kernel) -> Result<CvScores> {
    check_inputs(x, y, candidates.len())?;
    for h in candidates {
        super::BandwidthSpec::Fixed(h.clone()).validate(x.ncols(), x.nrows())?;
    }
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|h| {
            let inv_h: Vec<f64> = h.iter().map(|v| 1.0 / v).collect();
            let mut total = 0.0;
            for j in 0..x.nrows() {
                let xj = x.row(j);
                let pred = loo_prediction(x, y, xj, j, |l| {
                    x.row(l).iter().zip(xj).zip(&inv_h).map(|((a, b), ih)| kernel.eval((a - b) * ih)).product()
                });
                match pred {
                    Some(p) => total += (y[j] - p) * (y[j] - p),
                    None => return f64::INFINITY,
                }
            }
            total
        })
        .collect();
    let norms: Vec<f64> = candidates.iter().map(|h| h.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let best = pick_best(&scores, &norms, y);
    Ok(CvScores { scores, best })
}

/// Candidate bandwidth vector minimizing the leave-one-out squared error.
/// Ties (within `1e-12 * (1 + sum y^2)`) go to the smallest `|h|`.
pub fn loocv_bandwidth(x: &Matrix, y: &[f64], candidates: &[Vec<f64>], kernel: Kernel) -> Result<Vec<f64>> {
    let cv = loocv_bandwidth_scores(x, y, candidates, kernel)?;
    if !cv.scores[cv.best].is_finite() {
        return Err(Error::InvalidParameter("every bandwidth candidate produced a singular leave-one-out fit".into()));
    }
    Ok(candidates[cv.best].clone())
}

pub fn loocv_k_scores(x: &Matrix, y: &[f64], candidate_ks: &[usize], kernel: Kernel) -> Result<CvScores> {
    check_inputs(x, y, candidate_ks.len())?;
    let n = x.nrows();
    if let Some(bad) = candidate_ks.iter().find(|&&k| k == 0 || k > n - 1) {
        return Err(Error::InvalidParameter(format!("k = {bad} must lie in 1..={} for leave-one-out", n - 1)));
    }
    // distances of every pair, reused across candidates
    let dist: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|l| euclidean(x.row(j), x.row(l))).collect()).collect();
    let scores: Vec<f64> = candidate_ks
        .par_iter()
        .map(|&k| {
            let mut total = 0.0;
            let mut scratch = Vec::with_capacity(n - 1);
            for j in 0..n {
                scratch.clear();
                scratch.extend((0..n).filter(|&l| l != j).map(|l| dist[j][l]));
                let radius = kth_smallest(&mut scratch, k);
                let pred = loo_prediction(x, y, x.row(j), j, |l| knn_weight(kernel, dist[j][l], radius));
                match pred {
                    Some(p) => total += (y[j] - p) * (y[j] - p),
                    None => return f64::INFINITY,
                }
            }
            total
        })
        .collect();
    let norms: Vec<f64> = candidate_ks.iter().map(|&k| k as f64).collect();
    let best = pick_best(&scores, &norms, y);
    Ok(CvScores { scores, best })
}

/// Neighbour count minimizing leave-one-out error; radii are recomputed on
/// the reduced sample for every left-out observation.
pub fn loocv_k(x: &Matrix, y: &[f64], candidate_ks: &[usize], kernel: Kernel) -> Result<usize> {
    let cv = loocv_k_scores(x, y, candidate_ks, kernel)?;
    if !cv.scores[cv.best].is_finite() {
        return Err(Error::InvalidParameter("every k candidate produced a singular leave-one-out fit".into()));
    }
    Ok(candidate_ks[cv.best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn line(n: usize) -> Matrix {
        Matrix::from_vec(n, 1, (0..n).map(|i| i as f64 / (n - 1) as f64).collect()).unwrap()
    }

    /// Refits every leave-one-out model on an explicitly reduced sample.
    fn brute_force_scores(x: &Matrix, y: &[f64], cands: &[Vec<f64>]) -> Vec<f64> {
        cands
            .iter()
            .map(|h| {
                let mut total = 0.0;
                for j in 0..x.nrows() {
                    let keep: Vec<usize> = (0..x.nrows()).filter(|&l| l != j).collect();
                    let xr = x.select_rows(&keep);
                    let yr: Vec<f64> = keep.iter().map(|&l| y[l]).collect();
                    // 2x2 normal equations for d = 1
                    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for (l, yl) in yr.iter().enumerate() {
                        let u = xr.get(l, 0) - x.get(j, 0);
                        let w = (-(u / h[0]).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
                        s0 += w;
                        s1 += w * u;
                        s2 += w * u * u;
                        t0 += w * yl;
                        t1 += w * u * yl;
                    }
                    let det = s0 * s2 - s1 * s1;
                    let a = (s2 * t0 - s1 * t1) / det;
                    total += (y[j] - a).powi(2);
                }
                total
            })
            .collect()
    }

    #[test]
    fn constant_response_selects_smallest() {
        let x = line(20);
        let y = vec![5.0; 20];
        let cands = vec![vec![0.1], vec![0.3], vec![1.0]];
        assert_eq!(loocv_bandwidth(&x, &y, &cands, Kernel::Gaussian).unwrap(), vec![0.1]);
        let cands = vec![vec![1.0], vec![0.3], vec![0.1]];
        assert_eq!(loocv_bandwidth(&x, &y, &cands, Kernel::Gaussian).unwrap(), vec![0.1]);
    }

    #[test]
    fn affine_response_selects_smallest() {
        let x = line(20);
        let y: Vec<f64> = x.column_values(0).iter().map(|v| 2.0 * v).collect();
        let cands = vec![vec![0.2], vec![0.05], vec![1.0]];
        assert_eq!(loocv_bandwidth(&x, &y, &cands, Kernel::Gaussian).unwrap(), vec![0.05]);
    }

    #[test]
    fn matches_exhaustive_oracle_on_noisy_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let xs: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = xs.iter().map(|v| v * v + noise.sample(&mut rng)).collect();
        let x = Matrix::from_vec(50, 1, xs).unwrap();
        let cands = vec![vec![0.05], vec![0.2], vec![1.0]];
        let oracle = brute_force_scores(&x, &y, &cands);
        let cv = loocv_bandwidth_scores(&x, &y, &cands, Kernel::Gaussian).unwrap();
        for (a, b) in cv.scores.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9 * b.abs());
        }
        let oracle_best = oracle.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(cv.best, oracle_best);
    }

    #[test]
    fn singular_candidate_scores_infinity() {
        // Epanechnikov with a tiny bandwidth leaves no neighbours
        let x = line(10);
        let y: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let cv = loocv_bandwidth_scores(&x, &y, &[vec![0.01], vec![0.5]], Kernel::Epanechnikov).unwrap();
        assert!(cv.scores[0].is_infinite());
        assert_eq!(cv.best, 1);
    }

    #[test]
    fn k_selection_on_trivial_responses() {
        let x = line(30);
        let ks = [5, 15, 25];
        assert_eq!(loocv_k(&x, &[3.0; 30], &ks, Kernel::Gaussian).unwrap(), 5);
        let y: Vec<f64> = x.column_values(0).iter().map(|v| 1.0 - 4.0 * v).collect();
        assert_eq!(loocv_k(&x, &y, &ks, Kernel::Gaussian).unwrap(), 5);
    }

    #[test]
    fn k_selection_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let xs: Vec<f64> = (0..90).map(|_| 3.0 * rng.random::<f64>()).collect();
        let y: Vec<f64> = xs.iter().map(|v| v.sin() + noise.sample(&mut rng)).collect();
        let x = Matrix::from_vec(90, 1, xs.clone()).unwrap();
        let ks = [5usize, 15, 45];
        // oracle: rebuild each reduced sample, sort its distances, solve 2x2
        let oracle: Vec<f64> = ks
            .iter()
            .map(|&k| {
                (0..90)
                    .map(|j| {
                        let others: Vec<(f64, f64)> =
                            (0..90).filter(|&l| l != j).map(|l| (xs[l] - xs[j], y[l])).collect();
                        let mut d: Vec<f64> = others.iter().map(|(u, _)| u.abs()).collect();
                        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        let r = d[k - 1];
                        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
                        for (u, yl) in &others {
                            let w = (-(u.abs() / r).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
                            s0 += w;
                            s1 += w * u;
                            s2 += w * u * u;
                            t0 += w * yl;
                            t1 += w * u * yl;
                        }
                        let a = (s2 * t0 - s1 * t1) / (s0 * s2 - s1 * s1);
                        (y[j] - a).powi(2)
                    })
                    .sum()
            })
            .collect();
        let cv = loocv_k_scores(&x, &y, &ks, Kernel::Gaussian).unwrap();
        for (a, b) in cv.scores.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9 * b.abs());
        }
        let best = oracle.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(cv.best, best);
    }

    #[test]
    fn default_candidates_span_multipliers() {
        let x = line(100);
        let c = default_bandwidth_candidates(&x);
        assert_eq!(c.len(), 16);
        let base = rule_of_thumb(&x)[0];
        assert!((c[0][0] / base - 0.25).abs() < 1e-12);
        assert!((c[15][0] / base - 4.0).abs() < 1e-12);
        assert!(c.windows(2).all(|w| w[0][0] < w[1][0]));
    }

    #[test]
    fn rejects_tiny_samples() {
        let x = line(2);
        assert!(loocv_bandwidth(&x, &[1.0, 2.0], &[vec![1.0]], Kernel::Gaussian).is_err());
    }
}
