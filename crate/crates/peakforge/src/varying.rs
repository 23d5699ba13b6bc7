//! Blind L0-deconvolution with diverse unimodal peak shapes.
//!
//! The signal is modelled as `y = G a` where column `j` of `G` is a
//! unit-scaled unimodal spline with its coefficient mode fixed at position
//! `j`, and the pulse vector `a` picks out which of the `d` candidate
//! shapes are present and how tall they are. Shapes and pulses are
//! estimated by alternating fixed-mode ridge spline fits on partial
//! residuals with adaptive-ridge pulse updates; sparsity again comes from
//! the L0 penalty.
//!
//! The update order, the active neighbourhood, the inner iteration count
//! of five, the 0.0001 zeroing threshold, and the asymmetry between the
//! initialization (no kappa factor on the first two weight matrices) and
//! the loop (kappa times the weight matrix) are all kept exactly as in
//! the published algorithm.

use crate::basis::{build_basis, BasisError, SplineFunction};
use crate::unimodal::{fit_fixed_mode, reml_select_lambda, PenaltySpec, UnimodalError};
use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

/// Adaptive-ridge smoothing constant, `beta` in the weight updates.
const ADAPTIVE_RIDGE_BETA: f64 = 1e-5;
/// Pulses below this value are set to exactly zero.
const ZERO_THRESHOLD: f64 = 1e-4;
/// Outer convergence tolerance on `max_j |a_j_old - a_j|`.
const OUTER_TOL: f64 = 1e-3;
/// Outer iteration cap; hitting it flags the result as not converged.
const MAX_OUTER: usize = 200;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum VaryingError {
    #[error("x and y must be nonempty and of equal length (got {x} and {y})")]
    BadLengths { x: usize, y: usize },
    #[error("x must be strictly increasing; violation at position {0}")]
    NonMonotoneX(usize),
    #[error("tuning parameter kappa must be finite and positive, got {0}")]
    InvalidKappa(f64),
    #[error("cannot unit-scale an all-zero vector")]
    DegenerateScale,
    #[error("pulse update system is singular")]
    SingularSystem,
    #[error("no active pulses after initialization; kappa is too large for this signal")]
    EmptyActiveSet,
    #[error("noise window must have at least {min} observations, got {got}")]
    WindowTooShort { min: usize, got: usize },
    #[error("noise window {lo}..{hi} is out of range for a signal of length {len}")]
    WindowOutOfRange { lo: usize, hi: usize, len: usize },
    #[error("noise window is constant; refusing to proceed with sigma^2 = 0")]
    ConstantWindow,
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Unimodal(#[from] UnimodalError),
}

/// Scale a vector into `[0, 1]`: `(z - min)/(max - min)` when the entries
/// differ, `z / max` when they are all equal.
pub fn unit_scale(z: &[f64]) -> Result<Vec<f64>, VaryingError> {
    assert!(!z.is_empty(), "unit_scale needs at least one value");
    let min = z.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min < max {
        let range = max - min;
        Ok(z.iter().map(|&v| (v - min) / range).collect())
    } else {
        if max == 0.0 {
            return Err(VaryingError::DegenerateScale);
        }
        Ok(z.iter().map(|&v| v / max).collect())
    }
}

/// Output of the varying-shape deconvolution, all on the unit scale of the
/// transformed signal.
#[derive(Debug, Clone)]
pub struct VaryingDecoResult {
    /// `n x d` matrix of unit-scaled peak-shape columns.
    pub g_hat: DMatrix<f64>,
    /// Pulse vector of length `d`.
    pub a_hat: DVector<f64>,
    /// Fitted signal `G a`.
    pub fitted: DVector<f64>,
    /// 0-based indices of the nonzero pulses (mode position is index + 1).
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// The spline behind each column, mode fixed at its column position.
    pub splines: Vec<SplineFunction>,
    /// Shift and scale applied to the raw signal (`scaled = (y - shift)/scale`).
    pub y_shift: f64,
    pub y_scale: f64,
}

impl VaryingDecoResult {
    /// x-position of the maximum of each active column's shape.
    pub fn peak_locations(&self, x: &[f64]) -> Vec<f64> {
        self.active_set
            .iter()
            .map(|&j| {
                let col = self.g_hat.column(j);
                let mut arg = 0;
                for i in 1..col.len() {
                    if col[i] > col[arg] {
                        arg = i;
                    }
                }
                x[arg]
            })
            .collect()
    }
}

/// Sample variance of a peak-free window, used as the fixed error variance
/// for the spline subfits. Indices are 0-based and half-open.
pub fn estimate_noise_from_window(
    y: &[f64],
    window: std::ops::Range<usize>,
) -> Result<f64, VaryingError> {
    const MIN_WINDOW: usize = 30;
    if window.end > y.len() || window.start >= window.end {
        return Err(VaryingError::WindowOutOfRange {
            lo: window.start,
            hi: window.end,
            len: y.len(),
        });
    }
    let m = window.end - window.start;
    if m < MIN_WINDOW {
        return Err(VaryingError::WindowTooShort {
            min: MIN_WINDOW,
            got: m,
        });
    }
    let slice = &y[window];
    let mean = slice.iter().sum::<f64>() / m as f64;
    let var = slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    if var < f64::MIN_POSITIVE {
        return Err(VaryingError::ConstantWindow);
    }
    Ok(var)
}

fn solve_pulses(
    gtg: &DMatrix<f64>,
    gty: &DVector<f64>,
    weight: &DVector<f64>,
) -> Result<DVector<f64>, VaryingError> {
    let mut h = gtg.clone();
    for j in 0..h.nrows() {
        h[(j, j)] += weight[j];
    }
    Cholesky::new(h)
        .map(|c| c.solve(gty))
        .ok_or(VaryingError::SingularSystem)
}

fn zero_small(a: &mut DVector<f64>) {
    for v in a.iter_mut() {
        if *v < ZERO_THRESHOLD {
            *v = 0.0;
        }
    }
}

fn adaptive_weights(a: &DVector<f64>, factor: f64) -> DVector<f64> {
    let beta2 = ADAPTIVE_RIDGE_BETA * ADAPTIVE_RIDGE_BETA;
    DVector::from_fn(a.len(), |j, _| factor / (a[j] * a[j] + beta2))
}

/// Deconvolution with an L0 penalty and varying peak shapes.
///
/// `sigma2` is the error variance on the raw `y` scale; it is rescaled
/// internally to match the unit-scaled signal that the algorithm operates
/// on. Each subfit is a ridge-penalized fixed-mode unimodal spline with
/// its tuning parameter chosen by approximate REML on the subfit target.
pub fn varying_l0_fit(
    x: &[f64],
    y: &[f64],
    q: usize,
    k: usize,
    kappa: f64,
    sigma2: f64,
) -> Result<VaryingDecoResult, VaryingError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(VaryingError::BadLengths {
            x: x.len(),
            y: y.len(),
        });
    }
    for i in 1..x.len() {
        if !(x[i] > x[i - 1]) {
            return Err(VaryingError::NonMonotoneX(i));
        }
    }
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(VaryingError::InvalidKappa(kappa));
    }

    let n = y.len();
    let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (y_shift, y_scale) = if y_min < y_max {
        (y_min, y_max - y_min)
    } else {
        (0.0, y_max)
    };
    let ys = DVector::from_vec(unit_scale(y)?);
    let sigma2_scaled = (sigma2 / (y_scale * y_scale)).max(1e-300);

    let basis = build_basis(x[0], x[n - 1], q, k)?;
    let d = basis.dim();
    let design = basis.design_matrix(x)?;
    let penalty = PenaltySpec::ridge(d);
    let grid = crate::unimodal::default_lambda_grid();

    // Initialization: one fixed-mode subfit per candidate mode, each column
    // unit-scaled. The REML tuning depends only on the target, so it is
    // computed once for the shared target y.
    let lambda0 = reml_select_lambda(&design, &ys, &penalty, sigma2_scaled, &grid)?;
    let mut g = DMatrix::zeros(n, d);
    let mut splines: Vec<SplineFunction> = Vec::with_capacity(d);
    for j in 1..=d {
        let beta = fit_fixed_mode(&design, &ys, j, &penalty, lambda0, sigma2_scaled)?;
        let fitted = design.matrix() * &beta;
        let col = unit_scale(fitted.as_slice())?;
        for (i, v) in col.iter().enumerate() {
            g[(i, j - 1)] = *v;
        }
        splines.push(
            SplineFunction::new(basis.clone(), beta).expect("dimension checked by construction"),
        );
    }

    let mut gtg = g.transpose() * &g;
    let mut gty = g.transpose() * &ys;

    // First pulse pass uses W = kappa I, the second the adaptive weights,
    // both without a kappa factor, exactly as the initialization is stated.
    let mut a = solve_pulses(&gtg, &gty, &DVector::from_element(d, kappa))?;
    a = solve_pulses(&gtg, &gty, &adaptive_weights(&a, 1.0))?;
    zero_small(&mut a);
    if a.iter().all(|&v| v == 0.0) {
        return Err(VaryingError::EmptyActiveSet);
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_OUTER {
        iterations += 1;
        let a_old = a.clone();

        // Active neighbourhood: two positions on each side of every
        // nonzero pulse.
        let mut in_l = vec![false; d];
        for l in 0..d {
            if a[l] != 0.0 {
                let lo = l.saturating_sub(2);
                let hi = (l + 2).min(d - 1);
                for flag in in_l.iter_mut().take(hi + 1).skip(lo) {
                    *flag = true;
                }
            }
        }

        for j in 0..d {
            if !in_l[j] {
                continue;
            }
            // Partial residual with pulse j removed.
            let mut a_tilde = a.clone();
            a_tilde[j] = 0.0;
            let y_tilde = &ys - &g * &a_tilde;

            let lambda_j = reml_select_lambda(&design, &y_tilde, &penalty, sigma2_scaled, &grid)?;
            let beta = fit_fixed_mode(&design, &y_tilde, j + 1, &penalty, lambda_j, sigma2_scaled)?;
            let fitted = design.matrix() * &beta;
            let col = unit_scale(fitted.as_slice())?;
            let col_vec = DVector::from_vec(col);
            g.set_column(j, &col_vec);
            splines[j] = SplineFunction::new(basis.clone(), beta)
                .expect("dimension checked by construction");

            // Refresh the cross-product row/column of the changed column.
            let cross = g.transpose() * &col_vec;
            for i in 0..d {
                gtg[(i, j)] = cross[i];
                gtg[(j, i)] = cross[i];
            }
            gty[j] = col_vec.dot(&ys);

            for _ in 0..5 {
                a = solve_pulses(&gtg, &gty, &adaptive_weights(&a, kappa))?;
            }
            zero_small(&mut a);
        }

        if (&a_old - &a).amax() < OUTER_TOL {
            converged = true;
            break;
        }
    }

    let fitted = &g * &a;
    let active_set = (0..d).filter(|&j| a[j] != 0.0).collect();
    Ok(VaryingDecoResult {
        g_hat: g,
        a_hat: a,
        fitted,
        active_set,
        iterations,
        converged,
        splines,
        y_shift,
        y_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unimodal::cone_violation;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_scale_matches_the_stated_branches() {
        assert_eq!(unit_scale(&[2.0, 4.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(unit_scale(&[3.0, 3.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(unit_scale(&[0.0, 5.0, 10.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(matches!(
            unit_scale(&[0.0, 0.0]),
            Err(VaryingError::DegenerateScale)
        ));
    }

    #[test]
    fn noise_window_estimates_variance() {
        let mut state = 7_u64;
        let mut normal = move || {
            let mut next = || {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 11) as f64) / ((1u64 << 53) as f64)
            };
            let u1: f64 = next().max(1e-12);
            let u2: f64 = next();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        let y: Vec<f64> = (0..800).map(|_| 2.0 * normal()).collect();
        let var = estimate_noise_from_window(&y, 35..700).unwrap();
        assert!(var > 3.2 && var < 4.8, "var = {var}");
    }

    #[test]
    fn noise_window_rejects_bad_inputs() {
        let y = vec![1.0; 100];
        assert!(matches!(
            estimate_noise_from_window(&y, 0..29),
            Err(VaryingError::WindowTooShort { .. })
        ));
        assert!(matches!(
            estimate_noise_from_window(&y, 50..150),
            Err(VaryingError::WindowOutOfRange { .. })
        ));
        assert!(matches!(
            estimate_noise_from_window(&y, 0..100),
            Err(VaryingError::ConstantWindow)
        ));
    }

    fn two_bump_signal(n: usize) -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let bump = |t: f64, c: f64, w: f64, h: f64| h * (-(t - c) * (t - c) / (2.0 * w * w)).exp();
        let mut state = 11_u64;
        let mut noise = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5) * 0.01
        };
        let y: Vec<f64> = x
            .iter()
            .map(|&t| bump(t, 0.35, 0.03, 1.0) + bump(t, 0.62, 0.09, 0.6) + noise())
            .collect();
        (x, y)
    }

    #[test]
    fn two_diverse_bumps_yield_two_active_pulses() {
        let (x, y) = two_bump_signal(220);
        let sigma2 = estimate_noise_from_window(&y, 0..60).unwrap();
        let result = varying_l0_fit(&x, &y, 40, 3, 0.002, sigma2).unwrap();
        assert!(result.converged);
        assert_eq!(result.active_set.len(), 2, "active: {:?}", result.active_set);
        let locs = result.peak_locations(&x);
        assert!((locs[0] - 0.35).abs() < 0.05, "locs: {locs:?}");
        assert!((locs[1] - 0.62).abs() < 0.07, "locs: {locs:?}");
        // Unit-scale image and fixed-mode feasibility of every column.
        for j in 0..result.g_hat.ncols() {
            let col = result.g_hat.column(j);
            assert!(col.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
            assert!(cone_violation(result.splines[j].coefficients(), j + 1) <= 1e-9);
        }
        // Fitted values equal G a.
        let recomputed = &result.g_hat * &result.a_hat;
        for i in 0..recomputed.len() {
            assert_abs_diff_eq!(recomputed[i], result.fitted[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn oversized_kappa_reports_empty_active_set() {
        let (x, y) = two_bump_signal(150);
        let err = varying_l0_fit(&x, &y, 25, 3, 1e9, 1e-4).unwrap_err();
        assert!(matches!(err, VaryingError::EmptyActiveSet));
    }

    #[test]
    fn input_validation() {
        assert!(varying_l0_fit(&[], &[], 5, 3, 0.01, 1.0).is_err());
        assert!(varying_l0_fit(&[0.0, 0.0, 1.0], &[1.0, 2.0, 3.0], 5, 3, 0.01, 1.0).is_err());
        assert!(varying_l0_fit(&[0.0, 0.5, 1.0], &[1.0, 2.0, 3.0], 1, 1, 0.0, 1.0).is_err());
    }
}
