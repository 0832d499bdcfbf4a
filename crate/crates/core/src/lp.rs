//! Phase-I simplex for the feasibility problem `A lambda = b, lambda >= 0`.
//!
//! Dense tableau with Bland's rule, so pivoting is deterministic and cannot
//! cycle. Sized for convex-hull membership queries (d + 1 rows).

const PIVOT_EPS: f64 = 1e-12;

/// Minimum total artificial mass `sum |A lambda - b|` over `lambda >= 0`.
/// Zero (up to rounding) means the system is feasible.
pub fn phase_one_residual(a: &[Vec<f64>], b: &[f64]) -> f64 {
    let rows = a.len();
    if rows == 0 {
        return 0.0;
    }
    let n = a[0].len();
    let cols = n + rows;
    // tableau rows: [A | I | b], sign-flipped so b >= 0
    let mut t: Vec<Vec<f64>> = (0..rows)
        .map(|i| {
            let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
            let mut r = Vec::with_capacity(cols + 1);
            r.extend(a[i].iter().map(|v| sign * v));
            r.extend((0..rows).map(|k| if k == i { 1.0 } else { 0.0 }));
            r.push(sign * b[i]);
            r
        })
        .collect();
    let mut basis: Vec<usize> = (n..cols).collect();
    // reduced costs of the phase-one objective (sum of artificials)
    let mut cost = vec![0.0; cols + 1];
    for r in &t {
        for (c, v) in cost.iter_mut().zip(r) {
            *c -= v;
        }
    }
    for c in cost.iter_mut().take(cols).skip(n) {
        *c = 0.0;
    }
    let max_iter = 50 * (cols + rows);
    for _ in 0..max_iter {
        let Some(enter) = (0..cols).find(|&j| cost[j] < -PIVOT_EPS) else { break };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for (i, r) in t.iter().enumerate() {
            if r[enter] > PIVOT_EPS {
                let ratio = r[cols] / r[enter];
                let better = match leave {
                    None => true,
                    Some(l) => ratio < best - 1e-15 || (ratio <= best + 1e-15 && basis[i] < basis[l]),
                };
                if better {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(pr) = leave else { break };
        let piv = t[pr][enter];
        for v in t[pr].iter_mut() {
            *v /= piv;
        }
        let pivot_row = t[pr].clone();
        for (i, r) in t.iter_mut().enumerate() {
            if i != pr {
                let f = r[enter];
                if f != 0.0 {
                    for (x, p) in r.iter_mut().zip(&pivot_row) {
                        *x -= f * p;
                    }
                }
            }
        }
        let f = cost[enter];
        for (x, p) in cost.iter_mut().zip(&pivot_row) {
            *x -= f * p;
        }
        basis[pr] = enter;
    }
    // remaining artificial mass
    t.iter().zip(&basis).filter(|(_, &bv)| bv >= n).map(|(r, _)| r[cols].abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feasible_convex_combination() {
        // lambda1 + lambda2 = 1, 0*l1 + 2*l2 = 1
        let a = vec![vec![1.0, 1.0], vec![0.0, 2.0]];
        assert!(phase_one_residual(&a, &[1.0, 1.0]) < 1e-12);
    }

    #[test]
    fn infeasible_system() {
        let a = vec![vec![1.0, 1.0], vec![0.0, 2.0]];
        assert!(phase_one_residual(&a, &[1.0, 3.0]) > 0.1);
        assert!(phase_one_residual(&a, &[1.0, -0.5]) > 0.1);
    }
}
