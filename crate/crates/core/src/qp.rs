//! Convex quadratic programs `minimize ½ z'Pz + q'z subject to Gz ≤ c`.
//!
//! The solver is a Mehrotra predictor-corrector interior-point method on the
//! normal equations, followed by a polish step that solves the
//! equality-constrained KKT system on the identified active set.

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, DenseCholesky, DenseSym, SparseRow};

/// Block-diagonal symmetric matrix with equally sized dense blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiag {
    block: usize,
    data: Vec<f64>,
}

impl BlockDiag {
    /// `data` holds the blocks one after another, each row-major.
    pub fn new(block: usize, data: Vec<f64>) -> Result<Self> {
        if block == 0 || data.len() % (block * block) != 0 {
            return Err(Error::Dimension(format!("{} entries do not form {block}x{block} blocks", data.len())));
        }
        Ok(Self { block, data })
    }

    pub fn dense(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension(format!("{} entries for a {n}x{n} matrix", data.len())));
        }
        Self::new(n.max(1), if n == 0 { Vec::new() } else { data })
    }

    pub fn zeros(n: usize) -> Self {
        Self { block: 1, data: vec![0.0; n] }
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn n_blocks(&self) -> usize {
        self.data.len() / (self.block * self.block)
    }

    pub fn dim(&self) -> usize {
        self.n_blocks() * self.block
    }

    pub fn block(&self, k: usize) -> &[f64] {
        let bb = self.block * self.block;
        &self.data[k * bb..(k + 1) * bb]
    }

    /// Entry `(i, j)` of the full matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let b = self.block;
        if i / b != j / b {
            return 0.0;
        }
        self.block(i / b)[(i % b) * b + j % b]
    }

    /// `out += alpha * P z`
    pub fn mul_add(&self, z: &[f64], alpha: f64, out: &mut [f64]) {
        let b = self.block;
        for (k, blk) in self.data.chunks_exact(b * b).enumerate() {
            let zk = &z[k * b..(k + 1) * b];
            for (r, row) in blk.chunks_exact(b).enumerate() {
                out[k * b + r] += alpha * dot(row, zk);
            }
        }
    }

    pub fn quad_form(&self, z: &[f64]) -> f64 {
        let mut pz = vec![0.0; z.len()];
        self.mul_add(z, 1.0, &mut pz);
        dot(z, &pz)
    }

    pub fn max_abs(&self) -> f64 {
        norm_inf(&self.data)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let b = self.block;
        self.data
            .chunks_exact(b * b)
            .all(|blk| (0..b).all(|r| (0..r).all(|c| (blk[r * b + c] - blk[c * b + r]).abs() <= tol)))
    }

    fn scaled(&self, s: f64) -> Self {
        Self { block: self.block, data: self.data.iter().map(|v| v * s).collect() }
    }

    fn add_to(&self, h: &mut DenseSym) {
        let b = self.block;
        for (k, blk) in self.data.chunks_exact(b * b).enumerate() {
            for r in 0..b {
                for c in 0..=r {
                    let v = blk[r * b + c];
                    if v != 0.0 {
                        h.add(k * b + r, k * b + c, v);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: BlockDiag,
    pub q: Vec<f64>,
    pub g: Vec<SparseRow>,
    pub c: Vec<f64>,
}

impl QpProblem {
    pub fn new(p: BlockDiag, q: Vec<f64>, g: Vec<SparseRow>, c: Vec<f64>) -> Result<Self> {
        let qp = Self { p, q, g, c };
        qp.validate()?;
        Ok(qp)
    }

    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        if self.p.dim() != n {
            return Err(Error::Dimension(format!("P is {}x{0}, q has {n} entries", self.p.dim())));
        }
        if self.g.len() != self.c.len() {
            return Err(Error::Dimension(format!("{} constraint rows, {} bounds", self.g.len(), self.c.len())));
        }
        if self.g.iter().any(|r| r.idx.iter().any(|&i| i >= n)) {
            return Err(Error::Dimension("constraint column out of range".into()));
        }
        if !self.p.is_symmetric(1e-12) {
            return Err(Error::InvalidParameter("P is not symmetric".into()));
        }
        let finite = self.q.iter().chain(&self.c).chain(&self.p.data).all(|v| v.is_finite())
            && self.g.iter().all(|r| r.val.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite("QP data"));
        }
        Ok(())
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        0.5 * self.p.quad_form(z) + dot(&self.q, z)
    }

    pub fn push_row(&mut self, row: SparseRow, bound: f64) {
        self.g.push(row);
        self.c.push(bound);
    }

    /// Plain-text sparse dump: a header line `n m`, then `P nnz` followed by
    /// `i j v` triplets (both triangles), `q` with n values, `G nnz` with
    /// `r j v` triplets and `c` with m values.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.n_vars();
        writeln!(out, "{} {}", n, self.n_constraints())?;
        let mut trip = Vec::new();
        let b = self.p.block;
        for k in 0..self.p.n_blocks() {
            let blk = self.p.block(k);
            for r in 0..b {
                for c in 0..b {
                    let v = blk[r * b + c];
                    if v != 0.0 {
                        trip.push((k * b + r, k * b + c, v));
                    }
                }
            }
        }
        writeln!(out, "P {}", trip.len())?;
        for (i, j, v) in trip {
            writeln!(out, "{i} {j} {v:e}")?;
        }
        writeln!(out, "q")?;
        for v in &self.q {
            writeln!(out, "{v:e}")?;
        }
        let nnz: usize = self.g.iter().map(SparseRow::nnz).sum();
        writeln!(out, "G {nnz}")?;
        for (r, row) in self.g.iter().enumerate() {
            for (j, v) in row.idx.iter().zip(&row.val) {
                writeln!(out, "{r} {j} {v:e}")?;
            }
        }
        writeln!(out, "c")?;
        for v in &self.c {
            writeln!(out, "{v:e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `‖Pz + q + G'λ‖∞`
    pub stationarity: f64,
    /// `‖max(Gz − c, 0)‖∞`
    pub primal: f64,
    /// `max_r |λ_r (g_r z − c_r)|`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

/// Evidence that the constraint set is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InfeasibilityWitness {
    /// `y ≥ 0` with `G'y ≈ 0` and `c'y < 0`.
    Farkas { y: Vec<f64> },
    /// Largest violation of the returned iterate.
    MaxViolation { row: usize, amount: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    pub dual: Vec<f64>,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub polished: bool,
    pub witness: Option<InfeasibilityWitness>,
}

impl QpSolution {
    /// Rows with positive multipliers.
    pub fn active_set(&self) -> Vec<usize> {
        (0..self.dual.len()).filter(|&r| self.dual[r] > 0.0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Target for the KKT residuals after polish, relative to problem scale.
    pub tol: f64,
    pub max_iter: usize,
    pub polish: bool,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, polish: true }
    }
}

pub fn kkt_residuals(problem: &QpProblem, z: &[f64], dual: &[f64]) -> KktResiduals {
    let mut grad = problem.q.clone();
    problem.p.mul_add(z, 1.0, &mut grad);
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for ((row, &c), &l) in problem.g.iter().zip(&problem.c).zip(dual) {
        row.axpy_into(l, &mut grad);
        let slack = row.dot(z) - c;
        primal = primal.max(slack);
        comp = comp.max((l * slack).abs());
    }
    KktResiduals { stationarity: norm_inf(&grad), primal, complementarity: comp }
}

/// Scale factors the status test divides the raw residuals by.
fn residual_scales(problem: &QpProblem, z: &[f64], dual: &[f64]) -> (f64, f64, f64) {
    let mut pz = vec![0.0; z.len()];
    problem.p.mul_add(z, 1.0, &mut pz);
    let g_max = problem.g.iter().fold(0.0f64, |m, r| m.max(r.max_abs()));
    let s_dual = 1f64.max(norm_inf(&problem.q)).max(norm_inf(&pz));
    let s_primal = 1f64.max(norm_inf(&problem.c)).max(g_max * norm_inf(z));
    let s_comp = s_primal * 1f64.max(norm_inf(dual));
    (s_dual, s_primal, s_comp)
}

/// Largest residual relative to problem scale; `≤ tol` means Optimal.
pub fn scaled_kkt_error(problem: &QpProblem, z: &[f64], dual: &[f64]) -> f64 {
    let k = kkt_residuals(problem, z, dual);
    let (sd, sp, sc) = residual_scales(problem, z, dual);
    (k.stationarity / sd).max(k.primal / sp).max(k.complementarity / sc)
}

/// Row- and objective-normalized copy of a problem.
struct Scaled {
    p: BlockDiag,
    q: Vec<f64>,
    g: Vec<SparseRow>,
    c: Vec<f64>,
    obj_scale: f64,
    row_scale: Vec<f64>,
}

impl Scaled {
    fn new(problem: &QpProblem) -> Self {
        let obj_scale = 1f64.max(problem.p.max_abs()).max(norm_inf(&problem.q));
        let mut g = Vec::with_capacity(problem.g.len());
        let mut c = Vec::with_capacity(problem.g.len());
        let mut row_scale = Vec::with_capacity(problem.g.len());
        for (row, &b) in problem.g.iter().zip(&problem.c) {
            let nrm = row.val.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nrm = if nrm > 0.0 { nrm } else { 1.0 };
            g.push(SparseRow { idx: row.idx.clone(), val: row.val.iter().map(|v| v / nrm).collect() });
            c.push(b / nrm);
            row_scale.push(nrm);
        }
        Self {
            p: problem.p.scaled(1.0 / obj_scale),
            q: problem.q.iter().map(|v| v / obj_scale).collect(),
            g,
            c,
            obj_scale,
            row_scale,
        }
    }

    fn unscale_dual(&self, lam: &[f64]) -> Vec<f64> {
        lam.iter().zip(&self.row_scale).map(|(l, s)| (l * self.obj_scale / s).max(0.0)).collect()
    }

    fn n(&self) -> usize {
        self.q.len()
    }

    /// `Pz + q + G'λ`
    fn dual_residual(&self, z: &[f64], lam: &[f64]) -> Vec<f64> {
        let mut r = self.q.clone();
        self.p.mul_add(z, 1.0, &mut r);
        for (row, &l) in self.g.iter().zip(lam) {
            row.axpy_into(l, &mut r);
        }
        r
    }

    /// `(P + Σ w_r g_r g_r') x`
    fn normal_mul(&self, weights: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.p.mul_add(x, 1.0, &mut out);
        for (row, &w) in self.g.iter().zip(weights) {
            if w != 0.0 {
                row.axpy_into(w * row.dot(x), &mut out);
            }
        }
        out
    }

    /// Factors `P + Σ w_r g_r g_r'` plus a small diagonal shift, falling back
    /// to a pivot-modified factorization when the matrix is numerically singular.
    fn factor(&self, weights: &[f64], reg: f64, relative: bool) -> DenseCholesky {
        let mut h = DenseSym::zeros(self.n());
        self.p.add_to(&mut h);
        for (row, &w) in self.g.iter().zip(weights) {
            if w != 0.0 {
                h.add_outer(row, w);
            }
        }
        // relative to each diagonal entry so that rows with huge barrier
        // weights do not swamp the rest of the matrix
        if relative {
            h.add_diag_relative(reg, 1.0);
        } else {
            for i in 0..self.n() {
                h.add_diag(i, reg);
            }
        }
        h.factor().unwrap_or_else(|| h.factor_modified())
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter().zip(dv).fold(1.0f64, |a, (x, d)| if *d < 0.0 { a.min(-x / d) } else { a })
}

/// Result of the interior-point phase on the scaled problem.
struct IpmOutcome {
    z: Vec<f64>,
    s: Vec<f64>,
    lam: Vec<f64>,
    iterations: usize,
    converged: bool,
    farkas: Option<Vec<f64>>,
}

fn interior_point(sp: &Scaled, tol: f64, max_iter: usize) -> Result<IpmOutcome> {
    let n = sp.n();
    let m = sp.g.len();
    let reg = 0.0;
    let c_norm = 1.0 + norm_inf(&sp.c);
    let q_norm = 1.0 + norm_inf(&sp.q);

    // start: minimize ½z'(P + G'G)z + q'z − c'Gz, then push slacks positive
    let ones = vec![1.0; m];
    let f0 = sp.factor(&ones, reg, true);
    let mut z: Vec<f64> = sp.q.iter().map(|v| -v).collect();
    for (row, &b) in sp.g.iter().zip(&sp.c) {
        row.axpy_into(b, &mut z);
    }
    f0.solve_in_place(&mut z);
    // Shifted least-squares start: s = c − Gz and λ = Gz − c, each moved
    // into the positive orthant.
    let resid: Vec<f64> = sp.g.iter().zip(&sp.c).map(|(r, &b)| b - r.dot(&z)).collect();
    let shift_s = resid.iter().fold(0.0f64, |a, &v| a.max(-v));
    let shift_l = resid.iter().fold(0.0f64, |a, &v| a.max(v));
    let mut s: Vec<f64> = resid.iter().map(|v| v + 1.0 + shift_s).collect();
    let mut lam: Vec<f64> = resid.iter().map(|v| -v + 1.0 + shift_l).collect();
    if m == 0 {
        // unconstrained: one Newton step on the regularized system
        let f = sp.factor(&[], reg, true);
        if matches!(f, DenseCholesky::Modified { .. }) {
            return Err(Error::Solver("singular quadratic term without constraints".into()));
        }
        let mut z: Vec<f64> = sp.q.iter().map(|v| -v).collect();
        f.solve_in_place(&mut z);
        for _ in 0..3 {
            let mut r = sp.dual_residual(&z, &[]);
            r.iter_mut().for_each(|v| *v = -*v);
            f.solve_in_place(&mut r);
            z.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
        }
        return Ok(IpmOutcome { z, s, lam, iterations: 1, converged: true, farkas: None });
    }

    let mut stalled = 0;
    let mut best_infeas = f64::INFINITY;
    let mut since_best = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut farkas = None;
    for it in 0..max_iter {
        iterations = it + 1;
        let rd = sp.dual_residual(&z, &lam);
        let rp: Vec<f64> = sp.g.iter().zip(&sp.c).zip(&s).map(|((r, &b), &sv)| r.dot(&z) + sv - b).collect();
        let mu = dot(&s, &lam) / m as f64;
        let comp_max = s.iter().zip(&lam).fold(0.0f64, |a, (x, l)| a.max(x * l));
        let infeas = (norm_inf(&rd) / q_norm).max(norm_inf(&rp) / c_norm);
        if infeas <= tol && comp_max <= tol {
            converged = true;
            break;
        }
        // once complementarity is tiny, further progress on the residuals
        // is left to the polish step
        if infeas < 0.5 * best_infeas {
            best_infeas = infeas;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if mu <= tol && since_best >= 3 {
            break;
        }
        let lam_max = norm_inf(&lam);
        if lam_max > 1e6 {
            let y: Vec<f64> = lam.iter().map(|l| l / lam_max).collect();
            let mut gty = vec![0.0; n];
            for (row, &yr) in sp.g.iter().zip(&y) {
                row.axpy_into(yr, &mut gty);
            }
            if norm_inf(&gty) <= 1e-7 && dot(&sp.c, &y) < -1e-7 {
                farkas = Some(y);
                break;
            }
        }

        let w: Vec<f64> = lam.iter().zip(&s).map(|(l, sv)| l / sv).collect();
        let fact = sp.factor(&w, reg, true);
        // Newton direction for complementarity target rc (λ∘s − target)
        let solve = |rc: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            let mut rhs: Vec<f64> = rd.iter().map(|v| -v).collect();
            for (r, row) in sp.g.iter().enumerate() {
                row.axpy_into((rc[r] - lam[r] * rp[r]) / s[r], &mut rhs);
            }
            // refine against the unregularized matrix
            let target = rhs.clone();
            fact.solve_in_place(&mut rhs);
            for _ in 0..3 {
                let hx = sp.normal_mul(&w, &rhs);
                let mut corr: Vec<f64> = target.iter().zip(&hx).map(|(t, h)| t - h).collect();
                fact.solve_in_place(&mut corr);
                rhs.iter_mut().zip(&corr).for_each(|(a, b)| *a += b);
            }
            let dz = rhs;
            let ds: Vec<f64> = sp.g.iter().zip(&rp).map(|(row, &p)| -p - row.dot(&dz)).collect();
            let dl: Vec<f64> = (0..m).map(|r| (-rc[r] - lam[r] * ds[r]) / s[r]).collect();
            (dz, ds, dl)
        };
        let rc_aff: Vec<f64> = lam.iter().zip(&s).map(|(l, sv)| l * sv).collect();
        let (_, ds_a, dl_a) = solve(&rc_aff);
        let a_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
        let mu_aff = (0..m).map(|r| (s[r] + a_aff * ds_a[r]) * (lam[r] + a_aff * dl_a[r])).sum::<f64>() / m as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let rc: Vec<f64> = (0..m).map(|r| lam[r] * s[r] + ds_a[r] * dl_a[r] - sigma * mu).collect();
        let (dz, ds, dl) = solve(&rc);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
        for (a, b) in z.iter_mut().zip(&dz) {
            *a += alpha * b;
        }
        for r in 0..m {
            s[r] = (s[r] + alpha * ds[r]).max(1e-300);
            lam[r] = (lam[r] + alpha * dl[r]).max(1e-300);
        }
        stalled = if alpha < 1e-8 { stalled + 1 } else { 0 };
        if stalled >= 3 {
            break;
        }
    }
    Ok(IpmOutcome { z, s, lam, iterations, converged, farkas })
}

/// Solves the KKT system of the equality-constrained problem on `active`
/// by a regularized Schur complement with iterative refinement.
fn polish(sp: &Scaled, active: &[usize], z0: &[f64], lam0: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let delta = 1e-7;
    let mut w = vec![0.0; sp.g.len()];
    for &r in active {
        w[r] = 1.0 / delta;
    }
    let fact = sp.factor(&w, delta, false);
    let mut z = z0.to_vec();
    let mut lam_a: Vec<f64> = active.iter().map(|&r| lam0[r]).collect();
    for _ in 0..25 {
        let mut full = vec![0.0; sp.g.len()];
        for (k, &r) in active.iter().enumerate() {
            full[r] = lam_a[k];
        }
        let mut r1 = sp.dual_residual(&z, &full);
        r1.iter_mut().for_each(|v| *v = -*v);
        let r2: Vec<f64> = active.iter().map(|&r| sp.c[r] - sp.g[r].dot(&z)).collect();
        let err = norm_inf(&r1).max(norm_inf(&r2));
        if err <= 1e-15 {
            break;
        }
        let mut rhs = r1;
        for (k, &r) in active.iter().enumerate() {
            sp.g[r].axpy_into(r2[k] / delta, &mut rhs);
        }
        fact.solve_in_place(&mut rhs);
        for (k, &r) in active.iter().enumerate() {
            lam_a[k] += (sp.g[r].dot(&rhs) - r2[k]) / delta;
        }
        z.iter_mut().zip(&rhs).for_each(|(a, b)| *a += b);
    }
    if !z.iter().chain(&lam_a).all(|v| v.is_finite()) {
        return None;
    }
    let mut lam = vec![0.0; sp.g.len()];
    for (k, &r) in active.iter().enumerate() {
        lam[r] = lam_a[k];
    }
    Some((z, lam))
}

pub fn solve_qp(problem: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    problem.validate()?;
    let sp = Scaled::new(problem);
    let ipm_tol = (opts.tol * 1e-2).max(1e-13);
    let out = interior_point(&sp, ipm_tol, opts.max_iter)?;

    if let Some(y) = out.farkas {
        let y: Vec<f64> = y.iter().zip(&sp.row_scale).map(|(v, s)| v / s).collect();
        let ymax = norm_inf(&y);
        let y = y.into_iter().map(|v| v / ymax).collect();
        let dual = sp.unscale_dual(&out.lam);
        return Ok(QpSolution {
            objective: problem.objective(&out.z),
            kkt: kkt_residuals(problem, &out.z, &dual),
            z: out.z,
            dual,
            status: QpStatus::Infeasible,
            iterations: out.iterations,
            polished: false,
            witness: Some(InfeasibilityWitness::Farkas { y }),
        });
    }

    let mut z = out.z.clone();
    let mut dual = sp.unscale_dual(&out.lam);
    let mut err = scaled_kkt_error(problem, &z, &dual);
    let mut polished = false;
    if opts.polish && err > 1e-3 * opts.tol {
        // Equality solves on a guessed active set; a few passes drop rows
        // with negative multipliers and add violated ones.
        let mut active: Vec<bool> = (0..sp.g.len()).map(|r| out.lam[r] > out.s[r]).collect();
        let mut start = (out.z.clone(), out.lam.clone());
        for _ in 0..6 {
            let idx: Vec<usize> = (0..sp.g.len()).filter(|&r| active[r]).collect();
            let Some((pz, pl)) = polish(&sp, &idx, &start.0, &start.1) else { break };
            let pdual = sp.unscale_dual(&pl);
            let perr = scaled_kkt_error(problem, &pz, &pdual);
            if perr < err {
                z = pz.clone();
                dual = pdual;
                err = perr;
                polished = true;
            }
            if err <= 1e-3 * opts.tol {
                break;
            }
            let lam_tol = 1e-12 * norm_inf(&pl).max(1.0);
            let mut changed = false;
            for r in 0..sp.g.len() {
                if active[r] && pl[r] < -lam_tol {
                    active[r] = false;
                    changed = true;
                } else if !active[r] && sp.g[r].dot(&pz) - sp.c[r] > 1e-12 {
                    active[r] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            start = (pz, pl.iter().map(|v| v.max(0.0)).collect());
        }
    }

    let kkt = kkt_residuals(problem, &z, &dual);
    let (status, witness) = if err <= opts.tol {
        (QpStatus::Optimal, None)
    } else if out.converged || kkt.primal <= opts.tol * residual_scales(problem, &z, &dual).1 {
        (QpStatus::MaxIter, None)
    } else {
        let (row, amount) = problem
            .g
            .iter()
            .zip(&problem.c)
            .map(|(r, &b)| r.dot(&z) - b)
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        (QpStatus::MaxIter, Some(InfeasibilityWitness::MaxViolation { row, amount }))
    };
    Ok(QpSolution {
        objective: problem.objective(&z),
        z,
        dual,
        status,
        kkt,
        iterations: out.iterations,
        polished,
        witness,
    })
}

/// A constraint row supplied on demand, identified by a caller-chosen key.
#[derive(Debug, Clone, PartialEq)]
pub struct LazyRow {
    pub key: u64,
    pub row: SparseRow,
    pub bound: f64,
}

/// Reports the rows of a constraint family that `z` violates by more than `tol`.
pub trait ViolationOracle {
    fn violations(&self, z: &[f64], tol: f64) -> Vec<LazyRow>;
}

impl<F: Fn(&[f64], f64) -> Vec<LazyRow>> ViolationOracle for F {
    fn violations(&self, z: &[f64], tol: f64) -> Vec<LazyRow> {
        self(z, tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LazyOptions {
    pub qp: QpOptions,
    /// Absolute violation that makes a lazy row enter the problem.
    pub violation_tol: f64,
    pub max_rounds: usize,
}

impl Default for LazyOptions {
    fn default() -> Self {
        Self { qp: QpOptions::default(), violation_tol: 1e-8, max_rounds: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LazySolution {
    pub solution: QpSolution,
    pub rounds: usize,
    /// Lazy rows present in the final problem.
    pub final_rows: usize,
    /// Violated rows left when the round limit was hit.
    pub outstanding: usize,
    pub objective_trace: Vec<f64>,
    /// Keys of the lazy rows in the final problem, in insertion order.
    pub keys: Vec<u64>,
}

/// Constraint generation: solve with `initial` rows, add every violated
/// row reported by the oracle, and repeat until none remain.
pub fn lazy_constraint_solve(
    base: &QpProblem,
    initial: Vec<LazyRow>,
    oracle: &dyn ViolationOracle,
    opts: &LazyOptions,
) -> Result<LazySolution> {
    let mut problem = base.clone();
    let mut keys = Vec::new();
    let mut seen = HashSet::new();
    for lr in initial {
        if seen.insert(lr.key) {
            keys.push(lr.key);
            problem.push_row(lr.row, lr.bound);
        }
    }
    let mut trace = Vec::new();
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut sol = solve_qp(&problem, &opts.qp)?;
        trace.push(sol.objective);
        if sol.status == QpStatus::Infeasible {
            return Ok(finish(sol, rounds, keys, 0, trace));
        }
        let new: Vec<LazyRow> =
            oracle.violations(&sol.z, opts.violation_tol).into_iter().filter(|lr| !seen.contains(&lr.key)).collect();
        if new.is_empty() {
            return Ok(finish(sol, rounds, keys, 0, trace));
        }
        if rounds >= opts.max_rounds {
            sol.status = QpStatus::MaxIter;
            let outstanding = new.len();
            return Ok(finish(sol, rounds, keys, outstanding, trace));
        }
        for lr in new {
            if seen.insert(lr.key) {
                keys.push(lr.key);
                problem.push_row(lr.row, lr.bound);
            }
        }
    }

    fn finish(
        solution: QpSolution,
        rounds: usize,
        keys: Vec<u64>,
        outstanding: usize,
        objective_trace: Vec<f64>,
    ) -> LazySolution {
        LazySolution { solution, rounds, final_rows: keys.len(), outstanding, objective_trace, keys }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(entries: &[(usize, f64)]) -> SparseRow {
        let mut r = SparseRow::new();
        for &(i, v) in entries {
            r.push(i, v);
        }
        r
    }

    fn one_dim_projection() -> QpProblem {
        // (z − 1)² = ½·2z² − 2z + 1
        QpProblem::new(BlockDiag::dense(1, vec![2.0]).unwrap(), vec![-2.0], vec![row(&[(0, 1.0)])], vec![0.0]).unwrap()
    }

    #[test]
    fn projection_example() {
        let qp = one_dim_projection();
        let s = solve_qp(&qp, &QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.z[0].abs() < 1e-10);
        assert!((s.dual[0] - 2.0).abs() < 1e-9);
        assert!((s.objective + 1.0 - 1.0).abs() < 1e-9);
        let k = kkt_residuals(&qp, &[0.0], &[2.0]);
        assert_eq!(k, KktResiduals { stationarity: 0.0, primal: 0.0, complementarity: 0.0 });
        let k = kkt_residuals(&qp, &[1.0], &[0.0]);
        assert_eq!(k.primal, 1.0);
    }

    #[test]
    fn unconstrained_example() {
        let qp =
            QpProblem::new(BlockDiag::dense(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(), vec![-1.0, -2.0], vec![], vec![])
                .unwrap();
        let s = solve_qp(&qp, &QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.z[0] - 1.0).abs() < 1e-10 && (s.z[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn infeasible_detected() {
        // z ≤ −1 and z ≥ 1
        let qp = QpProblem::new(
            BlockDiag::dense(1, vec![1.0]).unwrap(),
            vec![0.0],
            vec![row(&[(0, 1.0)]), row(&[(0, -1.0)])],
            vec![-1.0, -1.0],
        )
        .unwrap();
        let s = solve_qp(&qp, &QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        match s.witness {
            Some(InfeasibilityWitness::Farkas { y }) => {
                assert!((y[0] - y[1]).abs() < 1e-6);
                assert!(y[0] * -1.0 + y[1] * -1.0 < 0.0);
            }
            other => panic!("unexpected witness {other:?}"),
        }
    }

    #[test]
    fn psd_quadratic_with_bounds() {
        // minimize −z0 with z0 ≤ 2, z1 free but boxed; P = 0
        let qp = QpProblem::new(
            BlockDiag::zeros(2),
            vec![-1.0, 0.0],
            vec![row(&[(0, 1.0)]), row(&[(1, 1.0)]), row(&[(1, -1.0)])],
            vec![2.0, 1.0, 1.0],
        )
        .unwrap();
        let s = solve_qp(&qp, &QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.z[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn dump_format_lists_all_parts() {
        let mut buf = Vec::new();
        one_dim_projection().write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "1 1\nP 1\n0 0 2e0\nq\n-2e0\nG 1\n0 0 1e0\nc\n0e0\n");
    }

    /// Dense Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[piv][col].abs() < 1e-12 {
                return None;
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        Some(x)
    }

    /// Exhaustive active-set oracle for strictly convex dense QPs.
    pub(crate) fn active_set_oracle(p: &[Vec<f64>], q: &[f64], g: &[Vec<f64>], c: &[f64]) -> f64 {
        let n = q.len();
        let m = c.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << m) {
            let act: Vec<usize> = (0..m).filter(|r| mask >> r & 1 == 1).collect();
            let k = act.len();
            if k > n {
                continue;
            }
            let dim = n + k;
            let mut a = vec![vec![0.0; dim]; dim];
            let mut b = vec![0.0; dim];
            for i in 0..n {
                a[i][..n].copy_from_slice(&p[i]);
                b[i] = -q[i];
            }
            for (t, &r) in act.iter().enumerate() {
                for i in 0..n {
                    a[i][n + t] = g[r][i];
                    a[n + t][i] = g[r][i];
                }
                b[n + t] = c[r];
            }
            let Some(x) = dense_solve(a, b) else { continue };
            let z = &x[..n];
            if x[n..].iter().any(|&l| l < -1e-9) {
                continue;
            }
            if g.iter().zip(c).any(|(gr, &cr)| dot(gr, z) > cr + 1e-9) {
                continue;
            }
            let obj: f64 = 0.5 * (0..n).map(|i| z[i] * dot(&p[i], z)).sum::<f64>() + dot(q, z);
            best = best.min(obj);
        }
        best
    }

    pub(crate) fn random_qp(
        rng: &mut ChaCha8Rng,
        n: usize,
        m: usize,
    ) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let p: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| a[k][i] * a[k][j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                    .collect()
            })
            .collect();
        let q = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = (0..m).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let c = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        (p, q, g, c)
    }

    pub(crate) fn to_problem(p: &[Vec<f64>], q: &[f64], g: &[Vec<f64>], c: &[f64]) -> QpProblem {
        let n = q.len();
        let flat = p.iter().flatten().copied().collect();
        let rows = g
            .iter()
            .map(|gr| {
                let mut r = SparseRow::new();
                for (i, &v) in gr.iter().enumerate() {
                    r.push(i, v);
                }
                r
            })
            .collect();
        QpProblem::new(BlockDiag::dense(n, flat).unwrap(), q.to_vec(), rows, c.to_vec()).unwrap()
    }

    #[test]
    fn matches_active_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (p, q, g, c) = random_qp(&mut rng, 6, 8);
            let want = active_set_oracle(&p, &q, &g, &c);
            let qp = to_problem(&p, &q, &g, &c);
            let s = solve_qp(&qp, &QpOptions::default()).unwrap();
            assert_eq!(s.status, QpStatus::Optimal);
            assert!((s.objective - want).abs() < 1e-6, "{} vs {want}", s.objective);
            assert!(s.kkt.max() <= 1e-8, "{:?}", s.kkt);
        }
    }

    #[test]
    fn kkt_matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, q, g, c) = random_qp(&mut rng, 4, 5);
        let qp = to_problem(&p, &q, &g, &c);
        let z: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lam: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..2.0)).collect();
        let k = kkt_residuals(&qp, &z, &lam);
        let mut stat: f64 = 0.0;
        for i in 0..4 {
            let v = dot(&p[i], &z) + q[i] + (0..5).map(|r| g[r][i] * lam[r]).sum::<f64>();
            stat = stat.max(v.abs());
        }
        let primal = (0..5).map(|r| (dot(&g[r], &z) - c[r]).max(0.0)).fold(0.0, f64::max);
        let comp = (0..5).map(|r| (lam[r] * (dot(&g[r], &z) - c[r])).abs()).fold(0.0, f64::max);
        assert!((k.stationarity - stat).abs() < 1e-12);
        assert!((k.primal - primal).abs() < 1e-12);
        assert!((k.complementarity - comp).abs() < 1e-12);
    }

    #[test]
    fn lazy_with_empty_oracle_is_one_round() {
        let qp = one_dim_projection();
        let none = |_: &[f64], _: f64| Vec::new();
        let lazy = lazy_constraint_solve(&qp, Vec::new(), &none, &LazyOptions::default()).unwrap();
        let direct = solve_qp(&qp, &QpOptions::default()).unwrap();
        assert_eq!(lazy.rounds, 1);
        assert_eq!(lazy.solution.z, direct.z);
    }

    #[test]
    fn lazy_recovers_full_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let (p, q, g, c) = random_qp(&mut rng, 5, 10);
            let full = solve_qp(&to_problem(&p, &q, &g, &c), &QpOptions::default()).unwrap();
            let base = to_problem(&p, &q, &[], &[]);
            let family: Vec<LazyRow> = g
                .iter()
                .zip(&c)
                .enumerate()
                .map(|(k, (gr, &cr))| LazyRow {
                    key: k as u64,
                    row: to_problem(&p, &q, &[gr.clone()], &[cr]).g[0].clone(),
                    bound: cr,
                })
                .collect();
            let oracle = |z: &[f64], tol: f64| {
                family.iter().filter(|lr| lr.row.dot(z) > lr.bound + tol).cloned().collect::<Vec<_>>()
            };
            let lazy = lazy_constraint_solve(&base, family[..2].to_vec(), &oracle, &LazyOptions::default()).unwrap();
            assert_eq!(lazy.solution.status, QpStatus::Optimal);
            assert!((lazy.solution.objective - full.objective).abs() < 1e-7);
            assert!(lazy.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        }
    }

    #[test]
    fn lazy_round_limit_reports_outstanding() {
        // chain of rows each only violated once the previous is present
        let base = QpProblem::new(BlockDiag::dense(1, vec![2.0]).unwrap(), vec![-20.0], vec![], vec![]).unwrap();
        let oracle = |z: &[f64], tol: f64| {
            (0..5u64)
                .filter(|&k| z[0] > 5.0 - k as f64 + tol)
                .map(|k| LazyRow { key: k, row: row(&[(0, 1.0)]), bound: 5.0 - k as f64 })
                .take(1)
                .collect::<Vec<_>>()
        };
        let opts = LazyOptions { max_rounds: 2, ..LazyOptions::default() };
        let lazy = lazy_constraint_solve(&base, Vec::new(), &oracle, &opts).unwrap();
        assert_eq!(lazy.solution.status, QpStatus::MaxIter);
        assert_eq!(lazy.rounds, 2);
        assert_eq!(lazy.outstanding, 1);
    }

    #[test]
    fn solver_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, q, g, c) = random_qp(&mut rng, 6, 8);
        let qp = to_problem(&p, &q, &g, &c);
        let a = solve_qp(&qp, &QpOptions::default()).unwrap();
        let b = solve_qp(&qp, &QpOptions::default()).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.dual, b.dual);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn duals_nonnegative_and_complementary(seed in 0u64..10_000, n in 1usize..7, m in 0usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, q, g, c) = random_qp(&mut rng, n, m);
            let s = solve_qp(&to_problem(&p, &q, &g, &c), &QpOptions::default()).unwrap();
            prop_assert_eq!(s.status, QpStatus::Optimal);
            prop_assert!(s.dual.iter().all(|&l| l >= 0.0));
            prop_assert!(s.kkt.complementarity <= 1e-8);
        }
    }
}
