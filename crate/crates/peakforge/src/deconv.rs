//! L0-penalized deconvolution with identical peak shapes.
//!
//! The observed signal is modelled as `y = G a + e` where the columns of
//! `G` hold shifted copies of one peak shape and the input-pulse vector
//! `a` carries peak count, locations and heights. Sparsity of `a` comes
//! from an L0 penalty optimized by adaptive-ridge iterations
//! `W = diag(1/(a_j^2 + beta^2))`, with an asymmetric diagonal penalty
//! keeping the pulses positive. Blind variants alternate pulse estimation
//! with an update of the peak shape: pointwise least squares, a parametric
//! wave, or a unimodal spline.

use crate::basis::{BasisError, SplineFunction};
use crate::unimodal::{cone_violation, fit_unimodal, LambdaPolicy, PenaltySpec, UnimodalError};
use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

/// Inner adaptive-ridge smoothing constant.
const ADAPTIVE_RIDGE_BETA: f64 = 1e-5;
/// Pulses below this value are set to exactly zero after convergence.
const ZERO_THRESHOLD: f64 = 1e-4;
/// Diagonal weight added to currently negative pulses.
const POSITIVITY_WEIGHT: f64 = 1e6;
/// Default tuning parameter; the value used for the FACT-style analysis.
pub const DEFAULT_KAPPA: f64 = 0.017;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DeconvError {
    #[error("wave parameters must be positive, got U0={u0}, xi1={xi1}, xi2={xi2}")]
    InvalidWaveParams { u0: f64, xi1: f64, xi2: f64 },
    #[error("photon count must be nonnegative, got {0}")]
    NegativePhotonCount(f64),
    #[error("peak shape must have between 1 and n = {n} samples, got {ng}")]
    BadShapeLength { ng: usize, n: usize },
    #[error("peak shape values must be finite with a positive maximum")]
    DegenerateShape,
    #[error("signal must be nonempty with a positive maximum")]
    DegenerateSignal,
    #[error("signal is constant; nothing to scale")]
    ConstantSignal,
    #[error("tuning parameter kappa must be finite and positive, got {0}")]
    InvalidKappa(f64),
    #[error("normal equations are singular")]
    SingularSystem,
    #[error("unimodal spline shapes need a basis domain covering [0, {0}]")]
    ShapeDomainTooSmall(f64),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Unimodal(#[from] UnimodalError),
}

/// Parameters of the parametric wave
/// `U0 * I[0,inf)(t) * (1 - exp(-t/xi1)) * exp(-t/xi2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveParams {
    pub u0: f64,
    pub xi1: f64,
    pub xi2: f64,
}

impl WaveParams {
    pub fn new(u0: f64, xi1: f64, xi2: f64) -> Result<Self, DeconvError> {
        if !(u0 > 0.0 && xi1 > 0.0 && xi2 > 0.0)
            || !u0.is_finite()
            || !xi1.is_finite()
            || !xi2.is_finite()
        {
            return Err(DeconvError::InvalidWaveParams { u0, xi1, xi2 });
        }
        Ok(Self { u0, xi1, xi2 })
    }

    /// Stationary point of the wave: `xi1 * ln((xi1 + xi2)/xi1)`.
    pub fn peak_time(&self) -> f64 {
        self.xi1 * ((self.xi1 + self.xi2) / self.xi1).ln()
    }
}

/// Single-wave form with baseline, arrival time and photon count fixed to
/// 0, 0 and 1.
pub fn wave_eval(t: f64, p: &WaveParams) -> f64 {
    if t < 0.0 {
        0.0
    } else {
        p.u0 * (1.0 - (-t / p.xi1).exp()) * (-t / p.xi2).exp()
    }
}

/// Full wave form with baseline `gamma`, `n_p` photons arriving at `t0`.
pub fn wave_eval_full(
    t: f64,
    gamma: f64,
    n_p: f64,
    t0: f64,
    p: &WaveParams,
) -> Result<f64, DeconvError> {
    if !(n_p >= 0.0) {
        return Err(DeconvError::NegativePhotonCount(n_p));
    }
    Ok(gamma + n_p * wave_eval(t - t0, p))
}

/// One peak shape powering the deconvolution columns, sampled on the first
/// `n_g` predictor grid offsets `0, 1, ..., n_g - 1`.
#[derive(Debug, Clone)]
pub enum PeakShape {
    Tabulated(Vec<f64>),
    ParametricWave { params: WaveParams, n_g: usize },
    UnimodalSpline { spline: SplineFunction, n_g: usize },
}

impl PeakShape {
    pub fn len(&self) -> usize {
        match self {
            PeakShape::Tabulated(g) => g.len(),
            PeakShape::ParametricWave { n_g, .. } => *n_g,
            PeakShape::UnimodalSpline { n_g, .. } => *n_g,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape values at the sample offsets.
    pub fn values(&self) -> Result<Vec<f64>, DeconvError> {
        let vals = match self {
            PeakShape::Tabulated(g) => g.clone(),
            PeakShape::ParametricWave { params, n_g } => {
                (0..*n_g).map(|t| wave_eval(t as f64, params)).collect()
            }
            PeakShape::UnimodalSpline { spline, n_g } => {
                let (lo, hi) = spline.basis().domain();
                let last = (*n_g - 1) as f64;
                if lo > 0.0 || hi < last {
                    return Err(DeconvError::ShapeDomainTooSmall(last));
                }
                let mut out = Vec::with_capacity(*n_g);
                for t in 0..*n_g {
                    out.push(spline.eval(t as f64)?);
                }
                out
            }
        };
        if vals.is_empty() || vals.iter().any(|v| !v.is_finite()) {
            return Err(DeconvError::DegenerateShape);
        }
        Ok(vals)
    }

    /// Shape values rescaled to a maximum of one, as used for pulse
    /// estimation.
    pub fn normalized_values(&self) -> Result<Vec<f64>, DeconvError> {
        let mut vals = self.values()?;
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max > 0.0) {
            return Err(DeconvError::DegenerateShape);
        }
        for v in &mut vals {
            *v /= max;
        }
        Ok(vals)
    }
}

/// Sparse pulse estimate together with the fitted signal.
#[derive(Debug, Clone)]
pub struct PulseSolution {
    /// Pulse heights, length `n + n_g - 1`; entry `c` sits `c - (n_g - 1)`
    /// samples from the start of the signal.
    pub pulses: DVector<f64>,
    pub kappa: f64,
    pub nonzero_count: usize,
    pub fitted: DVector<f64>,
    pub converged: bool,
}

impl PulseSolution {
    /// 0-based pulse vector indices with nonzero height.
    pub fn nonzero_indices(&self) -> Vec<usize> {
        (0..self.pulses.len())
            .filter(|&c| self.pulses[c] != 0.0)
            .collect()
    }

    /// Signed sample offsets of the nonzero pulses relative to the first
    /// observation (negative for peaks truncated at the left edge).
    pub fn pulse_offsets(&self, n_g: usize) -> Vec<isize> {
        self.nonzero_indices()
            .into_iter()
            .map(|c| c as isize - (n_g as isize - 1))
            .collect()
    }
}

/// Convolution matrix with shifted copies of the peak shape in its
/// columns: `G[i][c] = g[i - c + n_g - 1]` wherever that index is valid.
pub fn build_conv_matrix(shape: &[f64], n: usize) -> Result<DMatrix<f64>, DeconvError> {
    let n_g = shape.len();
    if n_g == 0 || n_g > n {
        return Err(DeconvError::BadShapeLength { ng: n_g, n });
    }
    let cols = n + n_g - 1;
    let mut g = DMatrix::zeros(n, cols);
    for c in 0..cols {
        let r_lo = (c + 1).saturating_sub(n_g);
        let r_hi = c.min(n - 1);
        for r in r_lo..=r_hi {
            g[(r, c)] = shape[r + n_g - 1 - c];
        }
    }
    Ok(g)
}

/// Adaptive-ridge L0 pulse estimation. The signal is rescaled internally to
/// a maximum of one; pulses and fitted values are returned on the input
/// scale.
pub fn l0_fit_pulses(
    g: &DMatrix<f64>,
    y: &DVector<f64>,
    kappa: f64,
) -> Result<PulseSolution, DeconvError> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(DeconvError::InvalidKappa(kappa));
    }
    if y.len() != g.nrows() || y.is_empty() {
        return Err(DeconvError::DegenerateSignal);
    }
    let scale = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(scale > 0.0) {
        return Err(DeconvError::DegenerateSignal);
    }
    let ys = y / scale;
    let m = g.ncols();
    let gtg = g.transpose() * g;
    let gty = g.transpose() * &ys;

    let solve_with = |diag: &DVector<f64>| -> Result<DVector<f64>, DeconvError> {
        let mut h = gtg.clone();
        for j in 0..m {
            h[(j, j)] += diag[j];
        }
        Cholesky::new(h)
            .map(|c| c.solve(&gty))
            .ok_or(DeconvError::SingularSystem)
    };

    let mut a = solve_with(&DVector::from_element(m, kappa))?;
    let beta2 = ADAPTIVE_RIDGE_BETA * ADAPTIVE_RIDGE_BETA;
    let mut converged = false;
    for _ in 0..100 {
        let diag = DVector::from_fn(m, |j, _| {
            let w = kappa / (a[j] * a[j] + beta2);
            if a[j] < 0.0 {
                w + POSITIVITY_WEIGHT
            } else {
                w
            }
        });
        let a_new = solve_with(&diag)?;
        let delta = (&a_new - &a).amax();
        a = a_new;
        if delta < 1e-6 {
            converged = true;
            break;
        }
    }
    let mut nonzero = 0;
    for j in 0..m {
        if a[j] < ZERO_THRESHOLD {
            a[j] = 0.0;
        } else {
            nonzero += 1;
        }
    }
    let fitted = g * &a * scale;
    Ok(PulseSolution {
        pulses: a * scale,
        kappa,
        nonzero_count: nonzero,
        fitted,
        converged,
    })
}

/// Matrix with shifted copies of the pulse vector in its columns, so that
/// `y ~ A g` for the shape update: `A[i][j] = a[i - j + n_g - 1]`.
fn pulse_design(pulses: &DVector<f64>, n: usize, n_g: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n_g, |i, j| pulses[i + n_g - 1 - j])
}

/// Min-to-zero shift followed by max-to-one scaling; the record inverts
/// the transform on fits and pulse heights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleRecord {
    pub min: f64,
    pub range: f64,
}

impl ScaleRecord {
    /// Back-transform a fitted value.
    pub fn value(&self, v: f64) -> f64 {
        v * self.range + self.min
    }

    /// Back-transform an amplitude (no baseline shift).
    pub fn amplitude(&self, h: f64) -> f64 {
        h * self.range
    }
}

pub fn preprocess_signal(y: &[f64]) -> Result<(DVector<f64>, ScaleRecord), DeconvError> {
    if y.is_empty() {
        return Err(DeconvError::DegenerateSignal);
    }
    let min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(min.is_finite() && max.is_finite()) {
        return Err(DeconvError::DegenerateSignal);
    }
    if min == max {
        return Err(DeconvError::ConstantSignal);
    }
    let range = max - min;
    let scaled = DVector::from_fn(y.len(), |i, _| (y[i] - min) / range);
    Ok((scaled, ScaleRecord { min, range }))
}

/// Options for blind deconvolution.
#[derive(Debug, Clone)]
pub struct BlindOptions {
    pub kappa: f64,
    pub max_outer: usize,
    /// Error variance handed to the unimodal-spline shape update.
    pub spline_sigma2: f64,
    /// Tuning policy for the unimodal-spline shape update.
    pub spline_lambda: LambdaPolicy,
}

impl Default for BlindOptions {
    fn default() -> Self {
        Self {
            kappa: DEFAULT_KAPPA,
            max_outer: 30,
            spline_sigma2: 1e-3,
            spline_lambda: LambdaPolicy::Reml(None),
        }
    }
}

/// Result of a blind deconvolution run.
#[derive(Debug, Clone)]
pub struct BlindResult {
    pub shape: PeakShape,
    pub pulses: PulseSolution,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Set when a degenerate pulse estimate forced the shape update to be
    /// skipped.
    pub shape_update_skipped: bool,
}

/// Alternate pulse estimation (shape fixed) and shape estimation (pulses
/// fixed) until the relative RSS change drops below 1e-5.
pub fn blind_deconv(
    y: &DVector<f64>,
    initial: &PeakShape,
    options: &BlindOptions,
) -> Result<BlindResult, DeconvError> {
    let n = y.len();
    let n_g = initial.len();
    if n_g == 0 || n_g > n {
        return Err(DeconvError::BadShapeLength { ng: n_g, n });
    }
    let mut shape = initial.clone();
    let mut prev_rss = f64::INFINITY;
    let mut converged = false;
    let mut shape_update_skipped = false;
    let mut outer = 0;
    let mut solution: Option<PulseSolution> = None;

    while outer < options.max_outer {
        outer += 1;
        let g = build_conv_matrix(&shape.normalized_values()?, n)?;
        let sol = l0_fit_pulses(&g, y, options.kappa)?;
        let rss = (y - &sol.fitted).norm_squared();
        let done = (prev_rss - rss).abs() <= 1e-5 * rss.max(f64::MIN_POSITIVE);
        prev_rss = rss;

        if done {
            solution = Some(sol);
            converged = true;
            break;
        }
        if sol.nonzero_count == 0 {
            shape_update_skipped = true;
            solution = Some(sol);
            break;
        }
        shape = update_shape(y, &sol.pulses, &shape, options)?;
        solution = Some(sol);
    }

    // Make the returned pulses consistent with the returned shape.
    let pulses = match (&converged, solution) {
        (true, Some(sol)) => sol,
        _ => {
            let g = build_conv_matrix(&shape.normalized_values()?, n)?;
            l0_fit_pulses(&g, y, options.kappa)?
        }
    };

    Ok(BlindResult {
        shape,
        pulses,
        outer_iterations: outer,
        converged,
        shape_update_skipped,
    })
}

fn update_shape(
    y: &DVector<f64>,
    pulses: &DVector<f64>,
    shape: &PeakShape,
    options: &BlindOptions,
) -> Result<PeakShape, DeconvError> {
    let n = y.len();
    let n_g = shape.len();
    let a = pulse_design(pulses, n, n_g);

    match shape {
        PeakShape::Tabulated(_) => {
            let ata = a.transpose() * &a;
            let aty = a.transpose() * y;
            let g = Cholesky::new(ata)
                .map(|c| c.solve(&aty))
                .ok_or(DeconvError::SingularSystem)?;
            Ok(PeakShape::Tabulated(g.iter().cloned().collect()))
        }
        PeakShape::ParametricWave { params, n_g } => {
            let objective = |p: &WaveParams| -> f64 {
                let g = DVector::from_fn(*n_g, |t, _| wave_eval(t as f64, p));
                (y - &a * g).norm_squared()
            };
            let start = [params.u0.ln(), params.xi1.ln(), params.xi2.ln()];
            let best = nelder_mead(&start, 1e-10, 400, |log_p| {
                let p = WaveParams {
                    u0: log_p[0].exp(),
                    xi1: log_p[1].exp(),
                    xi2: log_p[2].exp(),
                };
                objective(&p)
            });
            let params = WaveParams::new(best[0].exp(), best[1].exp(), best[2].exp())?;
            Ok(PeakShape::ParametricWave { params, n_g: *n_g })
        }
        PeakShape::UnimodalSpline { spline, n_g } => {
            // Pointwise deconvolved target, then a unimodal spline fit to it.
            let ata = a.transpose() * &a;
            let aty = a.transpose() * y;
            let target = Cholesky::new(ata)
                .map(|c| c.solve(&aty))
                .ok_or(DeconvError::SingularSystem)?;
            let basis = spline.basis().clone();
            let sites: Vec<f64> = (0..*n_g).map(|t| t as f64).collect();
            let design = basis.design_matrix(&sites)?;
            let penalty = PenaltySpec::ridge(basis.dim());
            let fit = fit_unimodal(
                &design,
                &target,
                &penalty,
                options.spline_sigma2,
                &options.spline_lambda,
            )?;
            debug_assert!(cone_violation(fit.spline.coefficients(), fit.mode) <= 1e-9);
            Ok(PeakShape::UnimodalSpline {
                spline: fit.spline,
                n_g: *n_g,
            })
        }
    }
}

/// Compact Nelder-Mead simplex search used for the parametric shape update.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    start: &[f64],
    ftol: f64,
    max_iter: usize,
    mut f: F,
) -> Vec<f64> {
    let dim = start.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(start.to_vec());
    for i in 0..dim {
        let mut v = start.to_vec();
        v[i] += 0.1;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];
        if (values[worst] - values[best]).abs()
            <= ftol * (values[best].abs() + values[worst].abs() + 1e-30)
        {
            break;
        }
        let mut centroid = vec![0.0; dim];
        for &i in order.iter().take(dim) {
            for (c, s) in centroid.iter_mut().zip(&simplex[i]) {
                *c += s / dim as f64;
            }
        }
        let point = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(&c, &w)| c + coef * (c - w))
                .collect()
        };
        let reflected = point(1.0);
        let fr = f(&reflected);
        if fr < values[best] {
            let expanded = point(2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = fr;
        } else {
            let contracted = point(-0.5);
            let fc = f(&contracted);
            if fc < values[worst] {
                simplex[worst] = contracted;
                values[worst] = fc;
            } else {
                // Shrink toward the best vertex.
                let best_point = simplex[best].clone();
                for i in 0..=dim {
                    if i == best {
                        continue;
                    }
                    for (s, &b) in simplex[i].iter_mut().zip(&best_point) {
                        *s = b + 0.5 * (*s - b);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let mut best_idx = 0;
    for i in 1..=dim {
        if values[i] < values[best_idx] {
            best_idx = i;
        }
    }
    simplex.swap_remove(best_idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn paper_wave() -> WaveParams {
        WaveParams::new(17.41, 4.745, 31.81).unwrap()
    }

    #[test]
    fn wave_is_zero_at_origin_and_before() {
        let p = paper_wave();
        assert_eq!(wave_eval(0.0, &p), 0.0);
        assert_eq!(wave_eval(-5.0, &p), 0.0);
        assert!(wave_eval(1.0, &p) > 0.0);
    }

    #[test]
    fn full_wave_reduces_to_single_wave() {
        let p = paper_wave();
        for t in [0.0, 3.5, 40.0, 151.0] {
            assert_abs_diff_eq!(
                wave_eval_full(t, 0.0, 1.0, 0.0, &p).unwrap(),
                wave_eval(t, &p),
                epsilon = 1e-15
            );
        }
        assert_eq!(wave_eval_full(10.0, 2.5, 0.0, 0.0, &p).unwrap(), 2.5);
    }

    #[test]
    fn full_wave_is_linear_in_photon_count() {
        let p = paper_wave();
        for i in 0..200 {
            let t = i as f64 * 0.75;
            let lhs = wave_eval_full(t, 0.4, 3.0, 10.0, &p).unwrap();
            let rhs = 0.4 + 3.0 * wave_eval(t - 10.0, &p);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn wave_params_must_be_positive() {
        assert!(WaveParams::new(0.0, 1.0, 1.0).is_err());
        assert!(WaveParams::new(1.0, -1.0, 1.0).is_err());
        assert!(WaveParams::new(1.0, 1.0, f64::NAN).is_err());
        assert!(wave_eval_full(0.0, 0.0, -1.0, 0.0, &paper_wave()).is_err());
    }

    #[test]
    fn conv_matrix_with_unit_shape_is_identity() {
        let g = build_conv_matrix(&[1.0], 3).unwrap();
        assert_eq!(g.shape(), (3, 3));
        assert_eq!(g, DMatrix::identity(3, 3));
    }

    #[test]
    fn conv_matrix_with_two_ones_is_banded() {
        let g = build_conv_matrix(&[1.0, 1.0], 3).unwrap();
        assert_eq!(g.shape(), (3, 4));
        let expected = DMatrix::from_row_slice(
            3,
            4,
            &[
                1.0, 1.0, 0.0, 0.0, //
                0.0, 1.0, 1.0, 0.0, //
                0.0, 0.0, 1.0, 1.0,
            ],
        );
        assert_eq!(g, expected);
    }

    #[test]
    fn conv_matrix_matches_direct_convolution_sum() {
        let shape = [0.3, 1.0, 0.6, 0.2];
        let n = 12;
        let n_g = shape.len();
        let g = build_conv_matrix(&shape, n).unwrap();
        let mut a = DVector::zeros(n + n_g - 1);
        a[5] = 2.0;
        a[11] = 0.7;
        let via_matrix = &g * &a;
        // f(x_i) = sum_j g_j a_{i-j} with the pulse vector indexed from
        // -(n_g - 1); entry c of `a` is paper index c - n_g + 1.
        for i in 0..n {
            let mut direct = 0.0;
            for j in 1..=n_g {
                let paper = i as isize + 1 - j as isize;
                let c = paper + n_g as isize - 1;
                if (0..a.len() as isize).contains(&c) {
                    direct += shape[j - 1] * a[c as usize];
                }
            }
            assert_abs_diff_eq!(via_matrix[i], direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn shape_longer_than_signal_is_rejected() {
        assert!(build_conv_matrix(&[1.0, 1.0, 1.0], 2).is_err());
        assert!(build_conv_matrix(&[], 2).is_err());
    }

    #[test]
    fn clean_single_peak_is_recovered() {
        let p = paper_wave();
        let n = 80;
        let n_g = 40;
        let shape: Vec<f64> = (0..n_g).map(|t| wave_eval(t as f64, &p)).collect();
        let max = shape.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let norm: Vec<f64> = shape.iter().map(|v| v / max).collect();
        let g = build_conv_matrix(&norm, n).unwrap();
        let target_col = 55;
        let y = DVector::from_iterator(n, g.column(target_col).iter().cloned());
        let sol = l0_fit_pulses(&g, &y, 1e-3).unwrap();
        assert_eq!(sol.nonzero_count, 1, "pulses: {:?}", sol.nonzero_indices());
        assert_eq!(sol.nonzero_indices()[0], target_col);
        assert_abs_diff_eq!(sol.pulses[target_col], 1.0, epsilon = 1e-3);
    }

    #[test]
    fn huge_kappa_zeroes_everything() {
        let g = build_conv_matrix(&[0.4, 1.0, 0.5], 20).unwrap();
        let mut truth = DVector::zeros(22);
        truth[8] = 1.0;
        truth[15] = 0.6;
        let y = &g * &truth;
        let sol = l0_fit_pulses(&g, &y, 1e8).unwrap();
        assert_eq!(sol.nonzero_count, 0);
        assert!(sol.pulses.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_shape_decouples_coordinates() {
        let g = build_conv_matrix(&[1.0], 3).unwrap();
        let y = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let sol = l0_fit_pulses(&g, &y, 1e-4).unwrap();
        assert_eq!(sol.nonzero_count, 1);
        assert_abs_diff_eq!(sol.pulses[1], 1.0, epsilon = 1e-2);
        assert_eq!(sol.pulses[0], 0.0);
        assert_eq!(sol.pulses[2], 0.0);
    }

    #[test]
    fn pulses_are_nonnegative_and_fitted_matches_product() {
        let p = paper_wave();
        let n = 120;
        let n_g = 60;
        let shape: Vec<f64> = (0..n_g).map(|t| wave_eval(t as f64, &p)).collect();
        let g = build_conv_matrix(&shape, n).unwrap();
        let mut truth = DVector::zeros(n + n_g - 1);
        truth[70] = 1.0;
        truth[100] = 0.5;
        let mut y = &g * &truth;
        let mut state = 42_u64;
        for i in 0..n {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            y[i] += (((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5) * 0.05;
        }
        let sol = l0_fit_pulses(&g, &y, 0.017).unwrap();
        assert!(sol.pulses.iter().all(|&v| v >= 0.0));
        let product = &g * (&sol.pulses / 1.0);
        for i in 0..n {
            assert_abs_diff_eq!(product[i], sol.fitted[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn preprocess_and_back_transform_round_trip() {
        let y = [-3.0, 7.0];
        let (scaled, record) = preprocess_signal(&y).unwrap();
        assert_eq!(scaled.as_slice(), &[0.0, 1.0]);
        assert_eq!(record.min, -3.0);
        assert_eq!(record.range, 10.0);

        let already = [0.0, 0.3, 1.0];
        let (scaled, record) = preprocess_signal(&already).unwrap();
        assert_eq!(scaled.as_slice(), &already);
        assert_eq!(record.min, 0.0);
        assert_eq!(record.range, 1.0);

        let y = [2.0, -1.5, 0.25, 9.0, 4.0];
        let (scaled, record) = preprocess_signal(&y).unwrap();
        for (orig, s) in y.iter().zip(scaled.iter()) {
            assert_abs_diff_eq!(record.value(*s), *orig, epsilon = 1e-12);
        }

        assert!(matches!(
            preprocess_signal(&[5.0, 5.0, 5.0]),
            Err(DeconvError::ConstantSignal)
        ));
    }

    #[test]
    fn parametric_blind_recovers_shape_on_clean_signal() {
        let truth = paper_wave();
        let n = 220;
        let n_g = 120;
        let arrivals = [30_usize, 110, 170];
        let heights = [1.0, 0.8, 0.6];
        let mut raw = vec![0.0_f64; n];
        for (&s, &h) in arrivals.iter().zip(&heights) {
            for (t, value) in raw.iter_mut().enumerate().skip(s) {
                *value += h * wave_eval((t - s) as f64, &truth);
            }
        }
        let (y, _) = preprocess_signal(&raw).unwrap();
        let initial = PeakShape::ParametricWave {
            params: WaveParams::new(truth.u0 * 1.15, truth.xi1 * 0.85, truth.xi2 * 1.15).unwrap(),
            n_g,
        };
        let options = BlindOptions {
            kappa: 0.017,
            ..BlindOptions::default()
        };
        let result = blind_deconv(&y, &initial, &options).unwrap();
        assert_eq!(result.pulses.nonzero_count, 3);
        let offsets = result.pulses.pulse_offsets(n_g);
        for (&s, got) in arrivals.iter().zip(offsets) {
            assert!((got - s as isize).abs() <= 1);
        }
        let PeakShape::ParametricWave { params, .. } = result.shape else {
            panic!("variant changed");
        };
        assert!((params.xi1 - truth.xi1).abs() / truth.xi1 < 0.1);
        assert!((params.xi2 - truth.xi2).abs() / truth.xi2 < 0.1);
    }
}
