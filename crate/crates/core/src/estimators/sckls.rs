//! Shape-constrained kernel-weighted least squares.

use super::constraints::{neighbour_pairs, ShapeConstraints};
use super::local::LocalDesign;
use super::{FitDiagnostics, HyperplaneModel, ShapeSpec};
use crate::error::{Error, Result};
use crate::grid::{adjacency_pairs, EvalGrid};
use crate::kernel::{BandwidthSpec, Kernel};
use crate::linalg::{norm_inf, Matrix};
use crate::qp::{kkt_residuals, lazy_constraint_solve, solve_qp, BlockDiag, LazyOptions, QpProblem, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScklsOptions {
    /// Generate Afriat rows on demand instead of including all of them.
    pub lazy: bool,
    pub solver: LazyOptions,
    /// Skip the QP when the unconstrained fit already satisfies the shape.
    pub shortcut: bool,
}

impl Default for ScklsOptions {
    fn default() -> Self {
        Self { lazy: true, solver: LazyOptions::default(), shortcut: true }
    }
}

pub fn sckls_fit(
    x: &Matrix,
    y: &[f64],
    grid: &EvalGrid,
    bw: &BandwidthSpec,
    kernel: Kernel,
    shape: &ShapeSpec,
    lazy: bool,
) -> Result<HyperplaneModel> {
    let design = LocalDesign::new(x, grid, bw, kernel)?;
    sckls_fit_with_design(&design, y, shape, &ScklsOptions { lazy, ..ScklsOptions::default() })
}

/// Seed rows for constraint generation: lattice adjacency when available,
/// otherwise nearest-neighbour pairs.
pub(crate) fn seed_pairs(grid: &EvalGrid) -> Vec<(usize, usize)> {
    match adjacency_pairs(grid) {
        Ok(adj) => adj.pairs,
        Err(_) => neighbour_pairs(grid.points(), 2 * grid.dim()),
    }
}

/// Solves `min ½θ'Pθ + q'θ` under the shape constraints anchored at
/// `points`. Returns the parameters and solver report (objective unset).
pub(crate) fn solve_shape_problem(
    points: &Matrix,
    seeds: &[(usize, usize)],
    p: BlockDiag,
    q: Vec<f64>,
    shape: &ShapeSpec,
    lazy: bool,
    opts: &LazyOptions,
    value_scale: f64,
) -> Result<(Vec<f64>, FitDiagnostics)> {
    let cons = ShapeConstraints::new(points, shape);
    let (rows, bounds) = cons.base_rows();
    let mut base = QpProblem::new(p, q, rows, bounds)?;
    let family = cons.family_size();
    let mut opts = *opts;
    opts.violation_tol *= value_scale;
    let (sol, rounds, afriat_rows) = if lazy {
        let out = lazy_constraint_solve(&base, cons.afriat_rows(seeds), &cons, &opts)?;
        if out.outstanding > 0 {
            log::warn!("constraint generation stopped with {} violated rows", out.outstanding);
        }
        (out.solution, out.rounds, out.final_rows)
    } else {
        for r in cons.all_afriat_rows() {
            base.push_row(r.row, r.bound);
        }
        (solve_qp(&base, &opts.qp)?, 1, family)
    };
    match sol.status {
        QpStatus::Infeasible => {
            return Err(Error::Solver("shape constraints are infeasible".into()));
        }
        QpStatus::MaxIter => {
            log::warn!("QP stopped before reaching tolerance: {:?}", sol.kkt);
        }
        QpStatus::Optimal => {}
    }
    let diag = FitDiagnostics {
        objective: f64::NAN,
        unconstrained_objective: None,
        status: sol.status,
        kkt: sol.kkt,
        rounds,
        afriat_rows,
        afriat_family: family,
        iterations: sol.iterations,
        unconstrained_feasible: false,
    };
    Ok((sol.z, diag))
}

pub(crate) fn split_theta(theta: &[f64], m: usize, d: usize) -> (Vec<f64>, Matrix) {
    let p = d + 1;
    let a = (0..m).map(|i| theta[i * p]).collect();
    let mut b = Matrix::zeros(m, d);
    for i in 0..m {
        b.row_mut(i).copy_from_slice(&theta[i * p + 1..(i + 1) * p]);
    }
    (a, b)
}

/// The SCKLS problem with every Afriat row included, as the solver sees it
/// before constraint generation.
pub fn sckls_qp(design: &LocalDesign, y: &[f64], shape: &ShapeSpec) -> Result<QpProblem> {
    if y.len() != design.n_obs() {
        return Err(Error::Dimension(format!("{} responses for {} inputs", y.len(), design.n_obs())));
    }
    shape.check(design.dim())?;
    let cons = ShapeConstraints::new(design.grid.points(), shape);
    let p = BlockDiag::new(design.dim() + 1, design.grams().iter().map(|v| 2.0 * v).collect())?;
    let q = design.cross(y).into_iter().map(|v| -2.0 * v).collect();
    let (rows, bounds) = cons.base_rows();
    let mut qp = QpProblem::new(p, q, rows, bounds)?;
    for r in cons.all_afriat_rows() {
        qp.push_row(r.row, r.bound);
    }
    Ok(qp)
}

pub fn sckls_fit_with_design(
    design: &LocalDesign,
    y: &[f64],
    shape: &ShapeSpec,
    opts: &ScklsOptions,
) -> Result<HyperplaneModel> {
    let d = design.dim();
    let m = design.n_points();
    if y.len() != design.n_obs() {
        return Err(Error::Dimension(format!("{} responses for {} inputs", y.len(), design.n_obs())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("responses"));
    }
    shape.check(d)?;
    if shape.is_trivial() {
        return Err(Error::InvalidParameter("shape imposes no constraint".into()));
    }
    let value_scale = 1.0 + norm_inf(y);
    let local = match design.solve_local(y, 0.0) {
        Ok(t) => Some(t),
        Err(Error::SingularLocalDesign { .. }) => None,
        Err(e) => return Err(e),
    };
    let unconstrained_objective = local.as_ref().map(|t| design.objective(t, y));
    let points = design.grid.points();
    let cons = ShapeConstraints::new(points, shape);

    let p_blocks = BlockDiag::new(d + 1, design.grams().iter().map(|v| 2.0 * v).collect())?;
    let q: Vec<f64> = design.cross(y).into_iter().map(|v| -2.0 * v).collect();

    if opts.shortcut {
        if let Some(theta) = &local {
            if cons.max_violation(theta) <= opts.solver.violation_tol * value_scale {
                let (rows, bounds) = cons.base_rows();
                let qp = QpProblem::new(p_blocks, q, rows, bounds)?;
                let kkt = kkt_residuals(&qp, theta, &vec![0.0; qp.n_constraints()]);
                let (a, b) = split_theta(theta, m, d);
                let obj = unconstrained_objective.unwrap_or(f64::NAN);
                return Ok(HyperplaneModel {
                    grid: design.grid.clone(),
                    a,
                    b,
                    shape: shape.clone(),
                    bandwidth: Some(design.bandwidth.clone()),
                    kernel: Some(design.kernel),
                    diagnostics: FitDiagnostics {
                        objective: obj,
                        unconstrained_objective,
                        status: QpStatus::Optimal,
                        kkt,
                        rounds: 0,
                        afriat_rows: 0,
                        afriat_family: cons.family_size(),
                        iterations: 0,
                        unconstrained_feasible: true,
                    },
                });
            }
        }
    }

    let seeds = if opts.lazy { seed_pairs(&design.grid) } else { Vec::new() };
    let (theta, mut diag) =
        solve_shape_problem(points, &seeds, p_blocks, q, shape, opts.lazy, &opts.solver, value_scale)?;
    diag.objective = design.objective(&theta, y);
    diag.unconstrained_objective = unconstrained_objective;
    let (a, b) = split_theta(&theta, m, d);
    Ok(HyperplaneModel {
        grid: design.grid.clone(),
        a,
        b,
        shape: shape.clone(),
        bandwidth: Some(design.bandwidth.clone()),
        kernel: Some(design.kernel),
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{cnls_fit, local_linear_fit, monotone_linear_fit, Curvature};
    use crate::grid::uniform_grid;
    use crate::qp::tests::active_set_oracle;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gauss(u: f64) -> f64 {
        (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn sample_1d(rng: &mut ChaCha8Rng, n: usize, f: impl Fn(f64) -> f64, sd: f64) -> (Matrix, Vec<f64>) {
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..10.0)).collect();
        let y = xs.iter().map(|&v| f(v) + sd * (rng.random::<f64>() - 0.5) * 3.4).collect();
        (Matrix::from_vec(n, 1, xs).unwrap(), y)
    }

    #[test]
    fn affine_data_reproduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = sample_1d(&mut rng, 40, |v| 1.0 + 2.0 * v, 0.0);
        let grid = uniform_grid(&x, &[6]).unwrap();
        let m = sckls_fit(
            &x,
            &y,
            &grid,
            &BandwidthSpec::Fixed(vec![1.0]),
            Kernel::Gaussian,
            &ShapeSpec::concave_increasing(1),
            true,
        )
        .unwrap();
        for i in 0..6 {
            let xi = grid.points().get(i, 0);
            assert!((m.a[i] - (1.0 + 2.0 * xi)).abs() < 1e-8);
            assert!((m.b.get(i, 0) - 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn slack_constraints_collapse_to_local_linear() {
        let x = Matrix::from_vec(50, 1, (0..50).map(|i| 1.0 + 9.0 * i as f64 / 49.0).collect()).unwrap();
        let y: Vec<f64> = x.as_slice().iter().map(|v| v.sqrt()).collect();
        let grid = uniform_grid(&x, &[5]).unwrap();
        let bw = BandwidthSpec::Fixed(vec![1.0]);
        let ll = local_linear_fit(&x, &y, &grid, &bw, Kernel::Gaussian).unwrap();
        let shape = ShapeSpec::concave_increasing(1);
        let m = sckls_fit(&x, &y, &grid, &bw, Kernel::Gaussian, &shape, true).unwrap();
        assert!(m.diagnostics.unconstrained_feasible);
        assert_eq!(m.diagnostics.rounds, 0);
        assert_eq!(m.a, ll.a);
        // the same holds when the QP is actually solved
        let design = LocalDesign::new(&x, &grid, &bw, Kernel::Gaussian).unwrap();
        let opts = ScklsOptions { shortcut: false, ..ScklsOptions::default() };
        let solved = sckls_fit_with_design(&design, &y, &shape, &opts).unwrap();
        assert_eq!(solved.diagnostics.afriat_rows, 8);
        for i in 0..5 {
            assert!((solved.a[i] - ll.a[i]).abs() < 1e-7);
        }
    }

    /// Dense (P, q, G, c, C) of the SCKLS QP built from first principles.
    fn dense_sckls(
        xs: &[f64],
        y: &[f64],
        grid: &[f64],
        h: f64,
    ) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>, f64) {
        let m = grid.len();
        let n = 2 * m;
        let mut p = vec![vec![0.0; n]; n];
        let mut q = vec![0.0; n];
        let mut cst = 0.0;
        for (i, &c) in grid.iter().enumerate() {
            for (&xj, &yj) in xs.iter().zip(y) {
                let w = gauss((xj - c) / h);
                let z = [1.0, xj - c];
                for r in 0..2 {
                    for s in 0..2 {
                        p[2 * i + r][2 * i + s] += 2.0 * w * z[r] * z[s];
                    }
                    q[2 * i + r] -= 2.0 * w * z[r] * yj;
                }
                cst += w * yj * yj;
            }
        }
        let mut g = Vec::new();
        let mut b = Vec::new();
        for i in 0..m {
            for l in 0..m {
                if i != l {
                    let mut row = vec![0.0; n];
                    row[2 * l] += 1.0;
                    row[2 * i] -= 1.0;
                    row[2 * i + 1] -= grid[l] - grid[i];
                    g.push(row);
                    b.push(0.0);
                }
            }
            let mut row = vec![0.0; n];
            row[2 * i + 1] = -1.0;
            g.push(row);
            b.push(0.0);
        }
        (p, q, g, b, cst)
    }

    #[test]
    fn small_instance_matches_active_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..5 {
            let xs: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..2.0)).collect();
            // convex truth so the constraints bind
            let y: Vec<f64> = xs.iter().map(|v| v * v + 0.2 * (rng.random::<f64>() - 0.5)).collect();
            let x = Matrix::from_vec(12, 1, xs.clone()).unwrap();
            let grid = uniform_grid(&x, &[3]).unwrap();
            let gp = grid.points().as_slice().to_vec();
            let (p, q, g, c, cst) = dense_sckls(&xs, &y, &gp, 0.5);
            let want = active_set_oracle(&p, &q, &g, &c) + cst;
            for lazy in [true, false] {
                let m = sckls_fit(
                    &x,
                    &y,
                    &grid,
                    &BandwidthSpec::Fixed(vec![0.5]),
                    Kernel::Gaussian,
                    &ShapeSpec::concave_increasing(1),
                    lazy,
                )
                .unwrap();
                assert!(
                    (m.diagnostics.objective - want).abs() < 1e-6,
                    "trial {trial}: {} vs {want}",
                    m.diagnostics.objective
                );
            }
        }
    }

    #[test]
    fn lazy_matches_full_on_three_by_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let data: Vec<f64> = (0..2 * n).map(|_| rng.random_range(1.0..10.0)).collect();
        let x = Matrix::from_vec(n, 2, data).unwrap();
        let y: Vec<f64> = x.rows_iter().map(|r| r[0] * r[1] / 10.0 + rng.random::<f64>() - 0.5).collect();
        let grid = uniform_grid(&x, &[3, 3]).unwrap();
        let bw = BandwidthSpec::Fixed(vec![2.0, 2.0]);
        let design = LocalDesign::new(&x, &grid, &bw, Kernel::Gaussian).unwrap();
        let shape = ShapeSpec::concave_increasing(2);
        let base = ScklsOptions { shortcut: false, ..ScklsOptions::default() };
        let lazy = sckls_fit_with_design(&design, &y, &shape, &base).unwrap();
        let full = sckls_fit_with_design(&design, &y, &shape, &ScklsOptions { lazy: false, ..base }).unwrap();
        assert_eq!(full.diagnostics.afriat_rows, 72);
        assert!(lazy.diagnostics.afriat_rows >= 40);
        assert!(
            (lazy.diagnostics.objective - full.diagnostics.objective).abs() < 1e-6 * (1.0 + full.diagnostics.objective)
        );
    }

    #[test]
    fn concave_unconstrained_fit_adds_no_rows() {
        let x = Matrix::from_vec(40, 1, (0..40).map(|i| 1.0 + 9.0 * i as f64 / 39.0).collect()).unwrap();
        let y: Vec<f64> = x.as_slice().iter().map(|v| v.ln()).collect();
        let grid = uniform_grid(&x, &[5]).unwrap();
        let bw = BandwidthSpec::Fixed(vec![1.0]);
        let ll = local_linear_fit(&x, &y, &grid, &bw, Kernel::Gaussian).unwrap();
        let viol = crate::estimators::afriat_violation(grid.points(), &ll.a, &ll.b, Curvature::Concave);
        assert_eq!(viol, 0.0);
        let design = LocalDesign::new(&x, &grid, &bw, Kernel::Gaussian).unwrap();
        let opts = ScklsOptions { shortcut: false, ..ScklsOptions::default() };
        let m = sckls_fit_with_design(&design, &y, &ShapeSpec::concave_increasing(1), &opts).unwrap();
        assert_eq!(m.diagnostics.rounds, 1);
        assert_eq!(m.diagnostics.afriat_rows, 8);
    }

    #[test]
    fn tiny_bandwidth_matches_cnls() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (x, y) = sample_1d(&mut rng, 20, |v| v.powf(0.8), 0.7);
        let grid = EvalGrid::from_points(x.clone());
        let m = sckls_fit(
            &x,
            &y,
            &grid,
            &BandwidthSpec::Fixed(vec![1e-6]),
            Kernel::Gaussian,
            &ShapeSpec::concave_increasing(1),
            true,
        )
        .unwrap();
        let c = cnls_fit(&x, &y, &ShapeSpec::concave_increasing(1)).unwrap();
        for (j, xj) in x.rows_iter().enumerate() {
            let k = (0..c.len()).find(|&k| c.grid.points().row(k) == xj).unwrap();
            assert!((m.a[j] - c.a[k]).abs() < 1e-4, "{} vs {}", m.a[j], c.a[k]);
        }
    }

    #[test]
    fn huge_bandwidth_matches_monotone_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let (x, y) = sample_1d(&mut rng, 20, |v| v.powf(0.8), 0.7);
        let grid = uniform_grid(&x, &[8]).unwrap();
        let m = sckls_fit(
            &x,
            &y,
            &grid,
            &BandwidthSpec::Fixed(vec![1e6]),
            Kernel::Gaussian,
            &ShapeSpec::concave_increasing(1),
            true,
        )
        .unwrap();
        let lin = monotone_linear_fit(&x, &y).unwrap();
        for i in 0..8 {
            let xi = grid.points().get(i, 0);
            assert!((m.a[i] - lin.predict(&[xi])).abs() < 1e-4);
            assert!((m.b.get(i, 0) - lin.slopes[0]).abs() < 1e-4);
        }
    }

    #[test]
    fn knn_bandwidth_fit_is_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = sample_1d(&mut rng, 80, |v| v.sqrt(), 0.5);
        let grid = uniform_grid(&x, &[10]).unwrap();
        let m = sckls_fit(
            &x,
            &y,
            &grid,
            &BandwidthSpec::Knn(20),
            Kernel::Gaussian,
            &ShapeSpec::concave_increasing(1),
            true,
        )
        .unwrap();
        assert!(crate::estimators::afriat_violation(grid.points(), &m.a, &m.b, Curvature::Concave) <= 1e-6);
        assert!(m.b.as_slice().iter().all(|&v| v >= -1e-9));
    }

    #[test]
    fn convex_decreasing_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x, y) = sample_1d(&mut rng, 60, |v| 10.0 / v, 0.5);
        let grid = uniform_grid(&x, &[8]).unwrap();
        let shape = ShapeSpec::parse("convex-decreasing", 1).unwrap();
        let m = sckls_fit(&x, &y, &grid, &BandwidthSpec::Fixed(vec![0.8]), Kernel::Gaussian, &shape, true).unwrap();
        assert!(crate::estimators::afriat_violation(grid.points(), &m.a, &m.b, Curvature::Convex) <= 1e-6);
        assert!(m.b.as_slice().iter().all(|&v| v <= 1e-9));
    }

    #[test]
    fn gradient_bounds_respected() {
        use crate::estimators::{BoundTarget, PointwiseBound};
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (x, y) = sample_1d(&mut rng, 60, |v| 2.0 * v, 0.3);
        let grid = uniform_grid(&x, &[6]).unwrap();
        let shape = ShapeSpec::concave_increasing(1).with_bound(PointwiseBound {
            target: BoundTarget::Gradient(0),
            lower: None,
            upper: Some(1.5),
        });
        let m = sckls_fit(&x, &y, &grid, &BandwidthSpec::Fixed(vec![1.0]), Kernel::Gaussian, &shape, true).unwrap();
        assert!(m.b.as_slice().iter().all(|&v| v <= 1.5 + 1e-8));
        assert!(m.b.as_slice().iter().any(|&v| v > 1.4));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn concave_increasing_fits_are_feasible(seed in 0u64..1000, curv in 0.2f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 60;
            let data: Vec<f64> = (0..2 * n).map(|_| rng.random_range(1.0..10.0)).collect();
            let x = Matrix::from_vec(n, 2, data).unwrap();
            let y: Vec<f64> = x.rows_iter().map(|r| (r[0] + r[1]).powf(curv) + rng.random::<f64>() - 0.5).collect();
            let grid = uniform_grid(&x, &[4, 4]).unwrap();
            let m = sckls_fit(&x, &y, &grid, &BandwidthSpec::Fixed(vec![2.0, 2.0]), Kernel::Gaussian, &ShapeSpec::concave_increasing(2), true).unwrap();
            prop_assert!(crate::estimators::afriat_violation(grid.points(), &m.a, &m.b, Curvature::Concave) <= 1e-6);
            prop_assert!(m.b.as_slice().iter().all(|&v| v >= -1e-9));
            prop_assert!(m.diagnostics.objective >= m.diagnostics.unconstrained_objective.unwrap() - 1e-9 * (1.0 + m.diagnostics.objective));
            for _ in 0..200 {
                let u = [rng.random_range(1.0..10.0), rng.random_range(1.0..10.0)];
                let v = [rng.random_range(1.0..10.0), rng.random_range(1.0..10.0)];
                let mid = [(u[0] + v[0]) / 2.0, (u[1] + v[1]) / 2.0];
                prop_assert!(m.predict(&mid) >= (m.predict(&u) + m.predict(&v)) / 2.0 - 1e-8);
                let hi = [u[0].max(v[0]), u[1].max(v[1])];
                prop_assert!(m.predict(&hi) >= m.predict(&u) - 1e-8);
            }
        }
    }
}
