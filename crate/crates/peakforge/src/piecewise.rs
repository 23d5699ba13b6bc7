//! Piecewise unimodal regression: threshold segmentation of the x-axis,
//! an independent unimodal spline per piece, and phase classification from
//! the sign change of the fitted derivative.

use crate::basis::{build_basis, BasisError};
use crate::unimodal::{
    fit_unimodal, fit_with_sigma_iteration, LambdaPolicy, PenaltyKind, PenaltySpec, UnimodalError,
    UnimodalFit,
};
use nalgebra::DVector;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PiecewiseError {
    #[error("x and y must be nonempty and of equal length (got {x} and {y})")]
    BadLengths { x: usize, y: usize },
    #[error("x must be strictly increasing; violation at position {0}")]
    NonMonotoneX(usize),
    #[error("threshold must be finite, got {0}")]
    BadThreshold(f64),
    #[error("segment is not fitted")]
    Unfitted,
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Unimodal(#[from] UnimodalError),
}

/// One above-threshold piece of the axis: a half-open observation index
/// range plus the covered x-interval, optionally carrying its fit.
#[derive(Debug, Clone)]
pub struct Segment {
    pub indices: std::ops::Range<usize>,
    pub x_lo: f64,
    pub x_hi: f64,
    pub fit: Option<UnimodalFit>,
    /// Per-segment fit failure; other segments proceed regardless.
    pub failure: Option<String>,
}

/// Within-piece phases split at the derivative's unique sign change.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLabels {
    /// Predictor value where the derivative crosses zero.
    pub turning_point: f64,
    /// Observation positions (within the segment) before the turning point.
    pub descent: std::ops::Range<usize>,
    /// Observation positions after the turning point.
    pub ascent: std::ops::Range<usize>,
}

/// Maximal runs with `y >= threshold`, each extended by one sub-threshold
/// observation per side when available; runs shorter than `min_len` are
/// dropped. Extensions never reach into a neighbouring segment.
pub fn segment_by_threshold(
    x: &[f64],
    y: &[f64],
    threshold: f64,
    min_len: usize,
) -> Result<Vec<Segment>, PiecewiseError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(PiecewiseError::BadLengths {
            x: x.len(),
            y: y.len(),
        });
    }
    for i in 1..x.len() {
        if !(x[i] > x[i - 1]) {
            return Err(PiecewiseError::NonMonotoneX(i));
        }
    }
    if !threshold.is_finite() {
        return Err(PiecewiseError::BadThreshold(threshold));
    }

    let mut segments = Vec::new();
    let mut i = 0;
    let mut prev_end = 0usize; // first index available for a left extension
    while i < y.len() {
        if y[i] >= threshold {
            let start = i;
            while i < y.len() && y[i] >= threshold {
                i += 1;
            }
            let lo = if start > prev_end { start - 1 } else { start };
            let hi = if i < y.len() { i + 1 } else { i };
            if hi - lo >= min_len {
                prev_end = hi;
                segments.push(Segment {
                    indices: lo..hi,
                    x_lo: x[lo],
                    x_hi: x[hi - 1],
                    fit: None,
                    failure: None,
                });
            }
        } else {
            i += 1;
        }
    }
    Ok(segments)
}

/// Variance handling for the per-piece fits.
#[derive(Debug, Clone, PartialEq)]
pub enum Sigma2Policy {
    Fixed(f64),
    Iterate { init: f64, abstol: f64 },
}

/// Configuration shared by every piece.
#[derive(Debug, Clone)]
pub struct PieceConfig {
    pub inner_knots: usize,
    pub degree: usize,
    pub penalty: PenaltyKind,
    pub lambda: LambdaPolicy,
    pub sigma2: Sigma2Policy,
}

fn build_penalty(kind: PenaltyKind, dim: usize) -> Result<PenaltySpec, UnimodalError> {
    match kind {
        PenaltyKind::Ridge => Ok(PenaltySpec::ridge(dim)),
        PenaltyKind::SecondOrderDifference => PenaltySpec::second_order_difference(dim),
        PenaltyKind::AgainstParametric => {
            // A piecewise run has no parametric reference; fall back to ridge.
            Ok(PenaltySpec::ridge(dim))
        }
    }
}

/// Fit each segment independently on its own sub-interval basis. Failures
/// are recorded on the segment without aborting the others.
pub fn fit_piecewise(
    x: &[f64],
    y: &[f64],
    segments: Vec<Segment>,
    config: &PieceConfig,
) -> Result<Vec<Segment>, PiecewiseError> {
    if x.len() != y.len() {
        return Err(PiecewiseError::BadLengths {
            x: x.len(),
            y: y.len(),
        });
    }
    let mut out = Vec::with_capacity(segments.len());
    for mut seg in segments {
        match fit_one(x, y, &seg, config) {
            Ok(fit) => seg.fit = Some(fit),
            Err(e) => seg.failure = Some(e.to_string()),
        }
        out.push(seg);
    }
    Ok(out)
}

fn fit_one(
    x: &[f64],
    y: &[f64],
    seg: &Segment,
    config: &PieceConfig,
) -> Result<UnimodalFit, PiecewiseError> {
    let xs = &x[seg.indices.clone()];
    let ys = DVector::from_row_slice(&y[seg.indices.clone()]);
    let basis = build_basis(seg.x_lo, seg.x_hi, config.inner_knots, config.degree)?;
    let design = basis.design_matrix(xs)?;
    let fit = match &config.sigma2 {
        Sigma2Policy::Fixed(s2) => fit_unimodal(&design, &ys, &build_penalty(config.penalty, basis.dim())?, *s2, &config.lambda)?,
        Sigma2Policy::Iterate { init, abstol } => fit_with_sigma_iteration(
            &design,
            &ys,
            &build_penalty(config.penalty, basis.dim())?,
            *init,
            *abstol,
            &config.lambda,
        )?,
    };
    Ok(fit)
}

/// Locate the unique sign change of the fitted derivative by bisection and
/// split the segment's observations at it. A flat fit has no phases and
/// returns `None`.
pub fn classify_phases(x: &[f64], seg: &Segment) -> Result<Option<PhaseLabels>, PiecewiseError> {
    let fit = seg.fit.as_ref().ok_or(PiecewiseError::Unfitted)?;
    let ds = fit.spline.derivative()?;
    let coeffs = ds.coefficients();
    let scale = fit
        .spline
        .coefficients()
        .amax()
        .max(1.0);
    if coeffs.amax() <= 1e-12 * scale {
        return Ok(None);
    }

    let (lo, hi) = ds.basis().domain();
    // The derivative coefficients are nonnegative up to the mode and
    // nonpositive after, so the function has at most one downward crossing.
    let n_grid = 512;
    let val = |t: f64| ds.eval(t).expect("grid point inside domain");
    let mut last_pos: Option<f64> = None;
    let mut first_neg: Option<f64> = None;
    let tol = 1e-12 * scale;
    for i in 0..=n_grid {
        let t = lo + (hi - lo) * i as f64 / n_grid as f64;
        let v = val(t);
        if v > tol {
            last_pos = Some(t);
        }
        if v < -tol && first_neg.is_none() && last_pos.is_some() {
            first_neg = Some(t);
        }
    }

    let xs = &x[seg.indices.clone()];
    let turning_point = match (last_pos, first_neg) {
        (Some(a), Some(b)) if a < b => {
            // Bisect the downward crossing to 1e-8 in predictor units.
            let (mut a, mut b) = (a, b);
            while b - a > 1e-8 {
                let mid = 0.5 * (a + b);
                if val(mid) > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        }
        (Some(_), _) => hi,  // never turns negative: monotone increasing
        (None, _) => lo,     // never positive: monotone decreasing
    };

    let split = xs.partition_point(|&v| v <= turning_point);
    Ok(Some(PhaseLabels {
        turning_point,
        descent: 0..split,
        ascent: split..xs.len(),
    }))
}
