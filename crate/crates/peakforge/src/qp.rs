//! Active-set solver for the cone-constrained quadratic programs behind
//! unimodal spline fits.
//!
//! The problem is `min 0.5 b'Qb - c'b` over the cone `S_m` of coefficient
//! vectors that are non-decreasing up to position `m` (1-based) and
//! non-increasing after it. Substituting signed consecutive differences
//! `v` (with `v_1 = b_1` free and `v_2.. >= 0`) turns the cone into the
//! nonnegative orthant, and the problem is solved with a Lawson-Hanson
//! style active-set iteration. The Cholesky factor of the passive block
//! is extended by one row per added variable and only rebuilt when a
//! variable leaves the passive set.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum QpError {
    #[error("quadratic form is not positive definite on the working subspace (ill-posed fit)")]
    NotPositiveDefinite,
    #[error("active-set iteration did not converge within {0} iterations (ill-posed fit)")]
    IterationLimit(usize),
    #[error("mode index {mode} is outside 1..={dim}")]
    InvalidMode { mode: usize, dim: usize },
}

/// Growing Cholesky factor of `A[p][p]` for the ordered passive set `p`.
struct PassiveFactor {
    /// Row-major lower triangle, sized for up to `cap` passive variables.
    l: DMatrix<f64>,
    len: usize,
}

impl PassiveFactor {
    fn new(cap: usize) -> Self {
        Self {
            l: DMatrix::zeros(cap, cap),
            len: 0,
        }
    }

    /// Append one variable whose column against the existing passive set is
    /// `col` (length `len`) and whose diagonal entry is `diag`.
    fn push(&mut self, col: &[f64], diag: f64) -> Result<(), QpError> {
        let p = self.len;
        // Forward substitution: L w = col.
        for i in 0..p {
            let mut s = col[i];
            for j in 0..i {
                s -= self.l[(i, j)] * self.l[(p, j)];
            }
            self.l[(p, i)] = s / self.l[(i, i)];
        }
        let mut d = diag;
        for j in 0..p {
            d -= self.l[(p, j)] * self.l[(p, j)];
        }
        if !(d > 1e-12 * diag.abs().max(1.0)) {
            return Err(QpError::NotPositiveDefinite);
        }
        self.l[(p, p)] = d.sqrt();
        self.len = p + 1;
        Ok(())
    }

    /// Solve `A[p][p] x = rhs` via the factor.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let p = self.len;
        let mut x = rhs.to_vec();
        for i in 0..p {
            let mut s = x[i];
            for j in 0..i {
                s -= self.l[(i, j)] * x[j];
            }
            x[i] = s / self.l[(i, i)];
        }
        for i in (0..p).rev() {
            let mut s = x[i];
            for j in i + 1..p {
                s -= self.l[(j, i)] * x[j];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    fn clear(&mut self) {
        self.len = 0;
    }
}

/// Minimize `0.5 b'Qb - c'b` subject to `b` lying in the unimodal cone with
/// the given 1-based mode position.
pub(crate) fn minimize_cone(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    mode: usize,
) -> Result<DVector<f64>, QpError> {
    let d = q.nrows();
    if mode < 1 || mode > d {
        return Err(QpError::InvalidMode { mode, dim: d });
    }

    // Signs of the difference variables: +1 while the coefficients rise,
    // -1 once they fall. v_0 carries the absolute level and is free.
    let mut sign = vec![1.0_f64; d];
    for (j, s) in sign.iter_mut().enumerate().skip(1) {
        if j >= mode {
            *s = -1.0;
        }
    }

    // A = T'QT and bb = T'c for the cumulative-sum map b = Tv, where
    // T[i][j] = sign[j] for i >= j. Suffix sums give each product in O(d^2).
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut acc = 0.0;
        for j in (0..d).rev() {
            acc += q[(i, j)];
            a[(i, j)] = sign[j] * acc;
        }
    }
    for j in 0..d {
        let mut acc = 0.0;
        for i in (0..d).rev() {
            acc += a[(i, j)];
            a[(i, j)] = sign[i] * acc;
        }
    }
    let mut bb = DVector::zeros(d);
    let mut acc = 0.0;
    for i in (0..d).rev() {
        acc += c[i];
        bb[i] = sign[i] * acc;
    }

    let scale = bb.amax().max(1.0);
    let grad_tol = 1e-10 * scale;
    let zero_tol = 1e-13 * scale.max(1.0);

    let mut passive: Vec<usize> = Vec::with_capacity(d);
    let mut in_passive = vec![false; d];
    let mut factor = PassiveFactor::new(d);
    let mut v = DVector::zeros(d);

    let push_var = |factor: &mut PassiveFactor, passive: &[usize], idx: usize| {
        let col: Vec<f64> = passive.iter().map(|&p| a[(p, idx)]).collect();
        factor.push(&col, a[(idx, idx)])
    };

    // The level variable is always free.
    push_var(&mut factor, &passive, 0)?;
    passive.push(0);
    in_passive[0] = true;
    {
        let rhs: Vec<f64> = passive.iter().map(|&p| bb[p]).collect();
        let sol = factor.solve(&rhs);
        v[0] = sol[0];
    }

    let max_iter = 50 * d + 100;
    for _ in 0..max_iter {
        // Gradient of the quadratic at the current (sparse) v.
        let mut grad = -&bb;
        for &p in &passive {
            if v[p] != 0.0 {
                grad += a.column(p) * v[p];
            }
        }

        let mut best: Option<(usize, f64)> = None;
        for j in 1..d {
            if !in_passive[j] && grad[j] < -grad_tol {
                if best.map_or(true, |(_, g)| grad[j] < g) {
                    best = Some((j, grad[j]));
                }
            }
        }
        let Some((enter, _)) = best else {
            // KKT conditions hold: passive gradients vanish by construction,
            // active multipliers are nonnegative.
            let mut beta = DVector::zeros(d);
            let mut run = 0.0;
            for j in 0..d {
                let vj = if j == 0 { v[0] } else { v[j].max(0.0) };
                run += sign[j] * vj;
                beta[j] = run;
            }
            return Ok(beta);
        };

        push_var(&mut factor, &passive, enter)?;
        passive.push(enter);
        in_passive[enter] = true;

        // Lawson-Hanson inner loop: re-solve on the passive set, and while
        // any constrained passive variable turns nonpositive, step to the
        // last feasible point on the segment and drop the variables that
        // reached zero.
        loop {
            let rhs: Vec<f64> = passive.iter().map(|&p| bb[p]).collect();
            let sol = factor.solve(&rhs);
            let feasible = passive
                .iter()
                .zip(&sol)
                .all(|(&p, &z)| p == 0 || z > zero_tol);
            if feasible {
                for (&p, &z) in passive.iter().zip(&sol) {
                    v[p] = z;
                }
                break;
            }
            let mut alpha = 1.0_f64;
            let mut blocker = None;
            for (&p, &z) in passive.iter().zip(&sol) {
                if p != 0 && z <= zero_tol {
                    let denom = v[p] - z;
                    let ratio = if denom > 0.0 { v[p] / denom } else { 0.0 };
                    if ratio < alpha || blocker.is_none() {
                        alpha = ratio.min(alpha);
                        blocker = Some(p);
                    }
                }
            }
            for (&p, &z) in passive.iter().zip(&sol) {
                v[p] += alpha * (z - v[p]);
            }
            if let Some(p) = blocker {
                v[p] = 0.0;
            }
            passive.retain(|&p| {
                if p != 0 && v[p] <= zero_tol {
                    v[p] = 0.0;
                    in_passive[p] = false;
                    false
                } else {
                    true
                }
            });
            factor.clear();
            let snapshot = std::mem::take(&mut passive);
            for &p in &snapshot {
                push_var(&mut factor, &snapshot, p)?;
            }
            passive = snapshot;
        }
    }
    Err(QpError::IterationLimit(max_iter))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn objective(q: &DMatrix<f64>, c: &DVector<f64>, b: &DVector<f64>) -> f64 {
        0.5 * (q * b).dot(b) - c.dot(b)
    }

    #[test]
    fn unconstrained_optimum_inside_cone_is_returned() {
        // Diagonal Q with a target already unimodal for mode 2.
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 1.5]));
        let target = DVector::from_vec(vec![0.5, 2.0, 1.0]);
        let c = &q * &target;
        let b = minimize_cone(&q, &c, 2).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(b[i], target[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn violating_target_is_projected_onto_cone() {
        // Identity Q: projection of the target onto S_1 (all decreasing).
        let q = DMatrix::identity(3, 3);
        let target = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let b = minimize_cone(&q, &target, 1).unwrap();
        // Decreasing projection pools the first two entries to 0.5.
        assert_abs_diff_eq!(b[0], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(b[1], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(b[2], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn solution_beats_random_feasible_points() {
        let mut state = 0x1234_5678_u64;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        let d = 6;
        for mode in 1..=d {
            // Random PD matrix and linear term.
            let m = DMatrix::from_fn(d, d, |_, _| next() - 0.5);
            let q = &m * m.transpose() + DMatrix::identity(d, d) * 0.5;
            let c = DVector::from_fn(d, |_, _| 2.0 * next() - 1.0);
            let b = minimize_cone(&q, &c, mode).unwrap();
            let f_star = objective(&q, &c, &b);
            for _ in 0..500 {
                // Random feasible point: nonnegative increments then decrements.
                let mut feas = DVector::zeros(d);
                let mut run = 4.0 * next() - 2.0;
                feas[0] = run;
                for j in 1..d {
                    let step = next();
                    run += if j < mode { step } else { -step };
                    feas[j] = run;
                }
                assert!(f_star <= objective(&q, &c, &feas) + 1e-8);
            }
        }
    }

    #[test]
    fn mode_bounds_are_checked() {
        let q = DMatrix::identity(3, 3);
        let c = DVector::zeros(3);
        assert!(matches!(
            minimize_cone(&q, &c, 0),
            Err(QpError::InvalidMode { .. })
        ));
        assert!(matches!(
            minimize_cone(&q, &c, 4),
            Err(QpError::InvalidMode { .. })
        ));
    }
}
