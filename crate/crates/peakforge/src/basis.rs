//! B-spline bases on an interval `[a, b]` with equidistant knots: basis
//! evaluation via the Cox-de Boor recursion, design matrices, spline
//! evaluation and derivatives.
//!
//! Knot indexing follows the usual convention for a basis of dimension
//! `d = q + k + 1`: the knot sequence runs from `tau_{-k}` to `tau_{q+k+1}`
//! with `tau_0 = a` and `tau_{q+1} = b`, extended `k` knots beyond each
//! boundary with the same spacing. Basis function `j` (stored 0-based) is
//! `N_{j-k, k+1}` in that numbering and has support
//! `[tau_{j-k}, tau_{j+1}]`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BasisError {
    #[error("domain bounds must be finite, got [{0}, {1}]")]
    NonFiniteBounds(f64, f64),
    #[error("domain lower bound {0} must be strictly below upper bound {1}")]
    EmptyDomain(f64, f64),
    #[error("spline degree must be at least 1, got {0}")]
    InvalidDegree(usize),
    #[error("evaluation point {x} is outside the basis domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("design matrix requires at least one site")]
    EmptySites,
    #[error("coefficient vector has length {got} but the basis dimension is {want}")]
    CoefficientLength { got: usize, want: usize },
}

/// B-spline basis of degree `k` with `q` equidistant inner knots on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    degree: usize,
    inner_count: usize,
    /// Full knot sequence, `knots[i]` is `tau_{i-k}`; length `q + 2k + 2`.
    knots: Vec<f64>,
    lo: f64,
    hi: f64,
}

/// Build a basis with equidistant inner knots on `[a, b]` and `k` extra
/// equidistant knots extended beyond each boundary.
pub fn build_basis(a: f64, b: f64, q: usize, k: usize) -> Result<BSplineBasis, BasisError> {
    if k < 1 {
        return Err(BasisError::InvalidDegree(k));
    }
    BSplineBasis::with_degree(a, b, q, k)
}

impl BSplineBasis {
    /// Internal constructor that also admits degree 0 (needed for
    /// derivatives of degree-1 splines).
    fn with_degree(a: f64, b: f64, q: usize, k: usize) -> Result<Self, BasisError> {
        if !a.is_finite() || !b.is_finite() {
            return Err(BasisError::NonFiniteBounds(a, b));
        }
        if a >= b {
            return Err(BasisError::EmptyDomain(a, b));
        }
        let h = (b - a) / (q as f64 + 1.0);
        let n_knots = q + 2 * k + 2;
        let mut knots = Vec::with_capacity(n_knots);
        for i in 0..n_knots {
            let j = i as isize - k as isize; // paper index of this knot
            let t = if j <= q as isize + 1 {
                a + j as f64 * h
            } else {
                b + (j - q as isize - 1) as f64 * h
            };
            knots.push(t);
        }
        // Pin the boundary knots exactly.
        knots[k] = a;
        knots[k + q + 1] = b;
        Ok(Self {
            degree: k,
            inner_count: q,
            knots,
            lo: a,
            hi: b,
        })
    }

    fn from_knots(knots: Vec<f64>, degree: usize, inner_count: usize, lo: f64, hi: f64) -> Self {
        debug_assert_eq!(knots.len(), inner_count + 2 * degree + 2);
        Self {
            degree,
            inner_count,
            knots,
            lo,
            hi,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn inner_knot_count(&self) -> usize {
        self.inner_count
    }

    /// Basis dimension `d = q + k + 1`.
    pub fn dim(&self) -> usize {
        self.inner_count + self.degree + 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Full knot sequence from `tau_{-k}` to `tau_{q+k+1}`.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Knot span index `mu` (into `knots`) with `knots[mu] <= x < knots[mu+1]`;
    /// the final interval is treated as closed so `x = b` lands in the last span.
    fn find_span(&self, x: f64) -> Result<usize, BasisError> {
        if !(x >= self.lo && x <= self.hi) {
            return Err(BasisError::OutOfDomain {
                x,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let k = self.degree;
        let q = self.inner_count;
        let h = (self.hi - self.lo) / (q as f64 + 1.0);
        let mut mu = k + (((x - self.lo) / h).floor() as usize).min(q);
        // Guard against floating-point drift of the uniform index formula.
        while mu > k && x < self.knots[mu] {
            mu -= 1;
        }
        while mu < k + q && x >= self.knots[mu + 1] {
            mu += 1;
        }
        Ok(mu)
    }

    /// The `k+1` basis values that can be nonzero at `x`, for basis indices
    /// `mu-k ..= mu` where `mu` is the returned span.
    fn nonzero_at(&self, mu: usize, x: f64) -> Vec<f64> {
        let k = self.degree;
        let mut values = vec![0.0; k + 1];
        values[0] = 1.0;
        let mut left = vec![0.0; k + 1];
        let mut right = vec![0.0; k + 1];
        for r in 1..=k {
            left[r] = x - self.knots[mu + 1 - r];
            right[r] = self.knots[mu + r] - x;
            let mut saved = 0.0;
            for s in 0..r {
                let temp = values[s] / (right[s + 1] + left[r - s]);
                values[s] = saved + right[s + 1] * temp;
                saved = left[r - s] * temp;
            }
            values[r] = saved;
        }
        values
    }

    /// Evaluate all `d` basis functions at `x`. At most `k+1` entries are
    /// nonzero.
    pub fn eval(&self, x: f64) -> Result<DVector<f64>, BasisError> {
        let mu = self.find_span(x)?;
        let local = self.nonzero_at(mu, x);
        let mut out = DVector::zeros(self.dim());
        let first = mu - self.degree;
        for (offset, v) in local.into_iter().enumerate() {
            out[first + offset] = v;
        }
        Ok(out)
    }

    /// Design matrix with row `i` equal to `eval(xs[i])`.
    pub fn design_matrix(&self, xs: &[f64]) -> Result<DesignMatrix, BasisError> {
        if xs.is_empty() {
            return Err(BasisError::EmptySites);
        }
        let d = self.dim();
        let mut matrix = DMatrix::zeros(xs.len(), d);
        for (i, &x) in xs.iter().enumerate() {
            let mu = self.find_span(x)?;
            let local = self.nonzero_at(mu, x);
            let first = mu - self.degree;
            for (offset, v) in local.into_iter().enumerate() {
                matrix[(i, first + offset)] = v;
            }
        }
        Ok(DesignMatrix {
            basis: self.clone(),
            sites: xs.to_vec(),
            matrix,
        })
    }
}

/// Convenience free function mirroring [`BSplineBasis::eval`].
pub fn eval_basis(basis: &BSplineBasis, x: f64) -> Result<DVector<f64>, BasisError> {
    basis.eval(x)
}

/// Matrix of B-spline basis functions evaluated at a vector of sites.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    basis: BSplineBasis,
    sites: Vec<f64>,
    matrix: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn sites(&self) -> &[f64] {
        &self.sites
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
}

/// A spline in B-spline form: a basis plus one coefficient per basis function.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFunction {
    basis: BSplineBasis,
    coefficients: DVector<f64>,
}

impl SplineFunction {
    pub fn new(basis: BSplineBasis, coefficients: DVector<f64>) -> Result<Self, BasisError> {
        if coefficients.len() != basis.dim() {
            return Err(BasisError::CoefficientLength {
                got: coefficients.len(),
                want: basis.dim(),
            });
        }
        Ok(Self {
            basis,
            coefficients,
        })
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn eval(&self, x: f64) -> Result<f64, BasisError> {
        let mu = self.basis.find_span(x)?;
        let local = self.basis.nonzero_at(mu, x);
        let first = mu - self.basis.degree;
        let mut acc = 0.0;
        for (offset, v) in local.into_iter().enumerate() {
            acc += v * self.coefficients[first + offset];
        }
        Ok(acc)
    }

    pub fn eval_many(&self, xs: &[f64]) -> Result<DVector<f64>, BasisError> {
        let mut out = DVector::zeros(xs.len());
        for (i, &x) in xs.iter().enumerate() {
            out[i] = self.eval(x)?;
        }
        Ok(out)
    }

    /// Derivative spline of degree `k - 1` on the trimmed knot sequence,
    /// with coefficients `k (beta_j - beta_{j-1}) / (tau_{j+k} - tau_j)`.
    pub fn derivative(&self) -> Result<SplineFunction, BasisError> {
        let k = self.basis.degree;
        if k < 1 {
            return Err(BasisError::InvalidDegree(0));
        }
        let q = self.basis.inner_count;
        let parent_knots = &self.basis.knots;
        let child_knots = parent_knots[1..parent_knots.len() - 1].to_vec();
        let child = BSplineBasis::from_knots(child_knots, k - 1, q, self.basis.lo, self.basis.hi);
        let d_child = child.dim();
        let mut coeff = DVector::zeros(d_child);
        for j in 0..d_child {
            let denom = parent_knots[j + 1 + k] - parent_knots[j + 1];
            coeff[j] =
                k as f64 * (self.coefficients[j + 1] - self.coefficients[j]) / denom;
        }
        SplineFunction::new(child, coeff)
    }
}
