//! Penalized unimodal spline regression.
//!
//! A fit minimizes the penalized residual sum of squares
//! `(1/sigma^2) ||y - B beta||^2 + lambda ||Omega^(1/2) (beta - beta0)||^2`
//! over the cone `S_m` of coefficient vectors that rise to a mode position
//! `m` and fall afterwards. The mode is searched exhaustively over all `d`
//! positions and chosen by the plain residual sum of squares; the tuning
//! parameter is chosen by approximate REML, where the cone truncation of
//! the coefficient prior is dropped so that the restricted likelihood does
//! not depend on the mode.

use crate::basis::{DesignMatrix, SplineFunction};
use crate::qp::{self, QpError};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum UnimodalError {
    #[error("response has length {got} but the design matrix has {want} rows")]
    ResponseLength { got: usize, want: usize },
    #[error("penalty is sized {got}x{got} but the basis dimension is {want}")]
    PenaltyDimension { got: usize, want: usize },
    #[error("penalty matrix must be symmetric positive semidefinite")]
    PenaltyNotPsd,
    #[error("second-order difference penalty needs dimension >= 3, got {0}")]
    PenaltyTooSmall(usize),
    #[error("tuning parameter must be finite and nonnegative, got {0}")]
    InvalidLambda(f64),
    #[error("error variance must be finite and positive, got {0}")]
    InvalidSigma2(f64),
    #[error("lambda grid must be nonempty with positive finite entries")]
    InvalidLambdaGrid,
    #[error("restricted likelihood failed for every lambda on the grid")]
    RemlFailed,
    #[error("sigma^2 iteration did not converge within {0} alternations")]
    SigmaIterationDiverged(usize),
    #[error("effective degrees of freedom {edf:.3} leave no residual degrees of freedom (n = {n})")]
    NoResidualDof { edf: f64, n: usize },
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Form of the coefficient penalty in the pRSS criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    /// Zero-order difference penalty against the constant zero function.
    Ridge,
    /// Second-order difference penalty for smoothness.
    SecondOrderDifference,
    /// User-supplied penalty matrix and center, e.g. against a parametric fit.
    AgainstParametric,
}

/// Penalty matrix `Omega` and center `beta0` for the pRSS criterion.
#[derive(Debug, Clone)]
pub struct PenaltySpec {
    kind: PenaltyKind,
    omega: DMatrix<f64>,
    beta0: DVector<f64>,
}

impl PenaltySpec {
    pub fn ridge(dim: usize) -> Self {
        Self {
            kind: PenaltyKind::Ridge,
            omega: DMatrix::identity(dim, dim),
            beta0: DVector::zeros(dim),
        }
    }

    /// `Omega = D2' D2` with `D2` the `(d-2) x d` second-difference matrix.
    pub fn second_order_difference(dim: usize) -> Result<Self, UnimodalError> {
        if dim < 3 {
            return Err(UnimodalError::PenaltyTooSmall(dim));
        }
        let mut d2 = DMatrix::zeros(dim - 2, dim);
        for i in 0..dim - 2 {
            d2[(i, i)] = 1.0;
            d2[(i, i + 1)] = -2.0;
            d2[(i, i + 2)] = 1.0;
        }
        Ok(Self {
            kind: PenaltyKind::SecondOrderDifference,
            omega: d2.transpose() * d2,
            beta0: DVector::zeros(dim),
        })
    }

    /// A custom penalty; `omega` must be symmetric positive semidefinite.
    pub fn against_parametric(
        omega: DMatrix<f64>,
        beta0: DVector<f64>,
    ) -> Result<Self, UnimodalError> {
        let d = omega.nrows();
        if omega.ncols() != d || beta0.len() != d {
            return Err(UnimodalError::PenaltyDimension {
                got: omega.ncols().max(beta0.len()),
                want: d,
            });
        }
        let scale = omega.amax().max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (omega[(i, j)] - omega[(j, i)]).abs() > 1e-10 * scale {
                    return Err(UnimodalError::PenaltyNotPsd);
                }
            }
        }
        let eig = SymmetricEigen::new(omega.clone());
        if eig.eigenvalues.iter().any(|&e| e < -1e-10 * scale) {
            return Err(UnimodalError::PenaltyNotPsd);
        }
        Ok(Self {
            kind: PenaltyKind::AgainstParametric,
            omega,
            beta0,
        })
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn beta0(&self) -> &DVector<f64> {
        &self.beta0
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    /// Rank and log generalized determinant (sum of logs of the nonzero
    /// eigenvalues) of `Omega`.
    fn rank_and_logdet(&self) -> (usize, f64) {
        match self.kind {
            PenaltyKind::Ridge => (self.dim(), 0.0),
            _ => {
                let eig = SymmetricEigen::new(self.omega.clone());
                let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
                let cut = 1e-10 * max.max(1.0);
                let mut rank = 0;
                let mut logdet = 0.0;
                for &e in eig.eigenvalues.iter() {
                    if e > cut {
                        rank += 1;
                        logdet += e.ln();
                    }
                }
                (rank, logdet)
            }
        }
    }

    fn quad(&self, beta: &DVector<f64>) -> f64 {
        let centered = beta - &self.beta0;
        (&self.omega * &centered).dot(&centered)
    }
}

/// How the tuning parameter is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaPolicy {
    /// Approximate REML over a grid; `None` uses [`default_lambda_grid`].
    Reml(Option<Vec<f64>>),
    Fixed(f64),
}

/// 50 logarithmically spaced grid points spanning 1e-6 to 1e6.
pub fn default_lambda_grid() -> Vec<f64> {
    let lo = 1e-6_f64.ln();
    let hi = 1e6_f64.ln();
    (0..50)
        .map(|i| (lo + (hi - lo) * i as f64 / 49.0).exp())
        .collect()
}

/// Result of a unimodal spline fit.
#[derive(Debug, Clone)]
pub struct UnimodalFit {
    pub spline: SplineFunction,
    /// 1-based mode position of the coefficient sequence.
    pub mode: usize,
    pub lambda: f64,
    pub sigma2: f64,
    pub rss: f64,
    pub prss: f64,
}

impl UnimodalFit {
    pub fn fitted_values(&self, design: &DesignMatrix) -> DVector<f64> {
        design.matrix() * self.spline.coefficients()
    }
}

fn validate_common(
    design: &DesignMatrix,
    y: &DVector<f64>,
    penalty: &PenaltySpec,
    sigma2: f64,
) -> Result<(), UnimodalError> {
    if y.len() != design.nrows() {
        return Err(UnimodalError::ResponseLength {
            got: y.len(),
            want: design.nrows(),
        });
    }
    if penalty.dim() != design.ncols() {
        return Err(UnimodalError::PenaltyDimension {
            got: penalty.dim(),
            want: design.ncols(),
        });
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(UnimodalError::InvalidSigma2(sigma2));
    }
    Ok(())
}

/// Normal-equation pieces shared by every mode candidate.
struct NormalForm {
    q: DMatrix<f64>,
    c: DVector<f64>,
}

fn normal_form(
    design: &DesignMatrix,
    y: &DVector<f64>,
    penalty: &PenaltySpec,
    lambda: f64,
    sigma2: f64,
) -> NormalForm {
    let b = design.matrix();
    let q = (b.transpose() * b) / sigma2 + penalty.omega() * lambda;
    let c = (b.transpose() * y) / sigma2 + (penalty.omega() * penalty.beta0()) * lambda;
    NormalForm { q, c }
}

/// Minimize the pRSS over `S_m` for a fixed 1-based mode position.
pub fn fit_fixed_mode(
    design: &DesignMatrix,
    y: &DVector<f64>,
    mode: usize,
    penalty: &PenaltySpec,
    lambda: f64,
    sigma2: f64,
) -> Result<DVector<f64>, UnimodalError> {
    validate_common(design, y, penalty, sigma2)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(UnimodalError::InvalidLambda(lambda));
    }
    let nf = normal_form(design, y, penalty, lambda, sigma2);
    Ok(qp::minimize_cone(&nf.q, &nf.c, mode)?)
}

/// Fit every candidate mode at one tuning parameter and keep the fit with
/// the smallest residual sum of squares; ties go to the smallest mode.
pub fn fit_unimodal(
    design: &DesignMatrix,
    y: &DVector<f64>,
    penalty: &PenaltySpec,
    sigma2: f64,
    lambda: &LambdaPolicy,
) -> Result<UnimodalFit, UnimodalError> {
    validate_common(design, y, penalty, sigma2)?;
    let lambda = match lambda {
        LambdaPolicy::Fixed(v) => {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(UnimodalError::InvalidLambda(*v));
            }
            *v
        }
        LambdaPolicy::Reml(grid) => {
            let default;
            let grid = match grid {
                Some(g) => g.as_slice(),
                None => {
                    default = default_lambda_grid();
                    &default
                }
            };
            reml_select_lambda(design, y, penalty, sigma2, grid)?
        }
    };

    let nf = normal_form(design, y, penalty, lambda, sigma2);
    let d = design.ncols();
    let b = design.matrix();
    let mut best: Option<(usize, f64, DVector<f64>)> = None;
    for mode in 1..=d {
        let beta = qp::minimize_cone(&nf.q, &nf.c, mode)?;
        let resid = y - b * &beta;
        let rss = resid.norm_squared();
        if best.as_ref().map_or(true, |(_, best_rss, _)| rss < *best_rss) {
            best = Some((mode, rss, beta));
        }
    }
    let (mode, rss, beta) = best.expect("basis dimension is at least 1");
    let prss = rss / sigma2 + lambda * penalty.quad(&beta);
    let spline = SplineFunction::new(design.basis().clone(), beta)
        .expect("coefficient length matches basis dimension");
    Ok(UnimodalFit {
        spline,
        mode,
        lambda,
        sigma2,
        rss,
        prss,
    })
}

/// Restricted log-likelihood of `lambda` under the untruncated coefficient
/// prior `beta ~ N(beta0, (1/lambda) Omega^-)`, with rank-deficient `Omega`
/// handled through its generalized determinant. All constant terms are
/// included.
pub fn restricted_log_likelihood(
    design: &DesignMatrix,
    y: &DVector<f64>,
    penalty: &PenaltySpec,
    sigma2: f64,
    lambda: f64,
) -> Result<f64, UnimodalError> {
    validate_common(design, y, penalty, sigma2)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(UnimodalError::InvalidLambda(lambda));
    }
    let b = design.matrix();
    let n = y.len();
    let d = design.ncols();
    let (rank, logdet_omega) = penalty.rank_and_logdet();
    let ytilde = y - b * penalty.beta0();
    let m = (b.transpose() * b) / sigma2;
    let w = (b.transpose() * &ytilde) / sigma2;
    let h = &m + penalty.omega() * lambda;
    let chol = Cholesky::new(h).ok_or(UnimodalError::RemlFailed)?;
    let logdet_h: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let theta = chol.solve(&w);
    let resid = &ytilde - b * &theta;
    let min_q = resid.norm_squared() / sigma2 + lambda * (penalty.omega() * &theta).dot(&theta);
    let two_pi = std::f64::consts::TAU;
    Ok(
        -0.5 * n as f64 * (two_pi * sigma2).ln() + 0.5 * rank as f64 * lambda.ln()
            + 0.5 * logdet_omega
            + 0.5 * (d - rank) as f64 * two_pi.ln()
            - 0.5 * logdet_h
            - 0.5 * min_q,
    )
}

/// Pick the grid value maximizing the restricted log-likelihood. Grid
/// points where the linear system is singular are skipped; if every point
/// fails that is reported distinctly from dimension errors.
pub fn reml_select_lambda(
    design: &DesignMatrix,
    y: &DVector<f64>,
    penalty: &PenaltySpec,
    sigma2: f64,
    grid: &[f64],
) -> Result<f64, UnimodalError> {
    validate_common(design, y, penalty, sigma2)?;
    if grid.is_empty() || grid.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
        return Err(UnimodalError::InvalidLambdaGrid);
    }
    let b = design.matrix();
    let d = design.ncols();
    let (rank, logdet_omega) = penalty.rank_and_logdet();
    let ytilde = y - b * penalty.beta0();
    let m = (b.transpose() * b) / sigma2;
    let w = (b.transpose() * &ytilde) / sigma2;

    // With a ridge penalty the profile over the whole grid only needs one
    // eigendecomposition of the data term.
    let ridge_eig = if penalty.kind() == PenaltyKind::Ridge {
        Some(SymmetricEigen::new(m.clone()))
    } else {
        None
    };

    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let ll = if let Some(eig) = &ridge_eig {
            let mut logdet_h = 0.0;
            let mut ok = true;
            for &mu in eig.eigenvalues.iter() {
                let e = mu + lambda;
                if e <= 0.0 {
                    ok = false;
                    break;
                }
                logdet_h += e.ln();
            }
            if !ok {
                continue;
            }
            let wt = eig.eigenvectors.transpose() * &w;
            let scaled = DVector::from_fn(d, |i, _| wt[i] / (eig.eigenvalues[i] + lambda));
            let theta = &eig.eigenvectors * scaled;
            let resid = &ytilde - b * &theta;
            let min_q = resid.norm_squared() / sigma2 + lambda * theta.norm_squared();
            let two_pi = std::f64::consts::TAU;
            -0.5 * y.len() as f64 * (two_pi * sigma2).ln() + 0.5 * rank as f64 * lambda.ln()
                + 0.5 * logdet_omega
                + 0.5 * (d - rank) as f64 * two_pi.ln()
                - 0.5 * logdet_h
                - 0.5 * min_q
        } else {
            match restricted_log_likelihood(design, y, penalty, sigma2, lambda) {
                Ok(v) => v,
                Err(UnimodalError::RemlFailed) => continue,
                Err(e) => return Err(e),
            }
        };
        if ll.is_finite() && best.map_or(true, |(_, best_ll)| ll > best_ll) {
            best = Some((lambda, ll));
        }
    }
    best.map(|(l, _)| l).ok_or(UnimodalError::RemlFailed)
}

/// Trace of the unconstrained penalized hat matrix
/// `B (B'B/sigma^2 + lambda Omega)^-1 B'/sigma^2`.
pub fn edf_unconstrained(
    design: &DesignMatrix,
    penalty: &PenaltySpec,
    lambda: f64,
    sigma2: f64,
) -> Result<f64, UnimodalError> {
    let b = design.matrix();
    let btb = b.transpose() * b;
    let h = &btb / sigma2 + penalty.omega() * lambda;
    let chol = Cholesky::new(h).ok_or(UnimodalError::RemlFailed)?;
    let x = chol.solve(&btb);
    Ok(x.trace() / sigma2)
}

/// Alternate unimodal fitting and moment-based variance estimation
/// `sigma^2 <- RSS / (n - edf)` until the variance stabilizes.
pub fn fit_with_sigma_iteration(
    design: &DesignMatrix,
    y: &DVector<f64>,
    penalty: &PenaltySpec,
    sigma2_init: f64,
    abstol: f64,
    lambda: &LambdaPolicy,
) -> Result<UnimodalFit, UnimodalError> {
    if !(sigma2_init.is_finite() && sigma2_init > 0.0) {
        return Err(UnimodalError::InvalidSigma2(sigma2_init));
    }
    if !(abstol.is_finite() && abstol > 0.0) {
        return Err(UnimodalError::InvalidSigma2(abstol));
    }
    let n = y.len();
    let mut sigma2 = sigma2_init;
    const MAX_ALTERNATIONS: usize = 100;
    for _ in 0..MAX_ALTERNATIONS {
        let mut fit = fit_unimodal(design, y, penalty, sigma2, lambda)?;
        let edf = edf_unconstrained(design, penalty, fit.lambda, sigma2)?;
        if n as f64 - edf < 1e-9 {
            return Err(UnimodalError::NoResidualDof { edf, n });
        }
        let sigma2_new = fit.rss / (n as f64 - edf);
        if (sigma2_new - sigma2).abs() < abstol {
            fit.sigma2 = sigma2_new;
            return Ok(fit);
        }
        sigma2 = sigma2_new.max(1e-30);
    }
    Err(UnimodalError::SigmaIterationDiverged(MAX_ALTERNATIONS))
}

/// Largest violation of the `S_m` inequalities; exactly feasible vectors
/// give 0.
pub fn cone_violation(coefficients: &DVector<f64>, mode: usize) -> f64 {
    let mut worst = 0.0_f64;
    for i in 1..coefficients.len() {
        let diff = coefficients[i] - coefficients[i - 1];
        let viol = if i + 1 <= mode { -diff } else { diff };
        worst = worst.max(viol);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;
    use approx::assert_abs_diff_eq;

    fn grid_sites(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    struct Lcg(u64);
    impl Lcg {
        fn next_f64(&mut self) -> f64 {
            self.0 = self
                .0
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64) / ((1u64 << 53) as f64)
        }
    }

    #[test]
    fn constant_data_is_reproduced_exactly() {
        let basis = build_basis(0.0, 1.0, 4, 2).unwrap();
        let xs = grid_sites(30, 0.0, 1.0);
        let design = basis.design_matrix(&xs).unwrap();
        let y = DVector::from_element(30, 3.0);
        let penalty = PenaltySpec::ridge(design.ncols());
        let fit = fit_unimodal(&design, &y, &penalty, 1.0, &LambdaPolicy::Fixed(0.0)).unwrap();
        assert!(fit.rss < 1e-18);
        for &c in fit.spline.coefficients().iter() {
            assert_abs_diff_eq!(c, 3.0, epsilon = 1e-8);
        }
        // Ties across modes resolve to the smallest index.
        assert_eq!(fit.mode, 1);
    }

    #[test]
    fn exact_unimodal_spline_is_recovered() {
        let basis = build_basis(0.0, 1.0, 5, 3).unwrap();
        let d = basis.dim();
        let truth = DVector::from_vec(vec![0.1, 0.5, 1.2, 2.0, 1.4, 0.8, 0.3, 0.1, 0.05]);
        assert_eq!(truth.len(), d);
        let xs = grid_sites(60, 0.0, 1.0);
        let design = basis.design_matrix(&xs).unwrap();
        let y = design.matrix() * &truth;
        let penalty = PenaltySpec::ridge(d);
        let fit = fit_unimodal(&design, &y, &penalty, 1.0, &LambdaPolicy::Fixed(0.0)).unwrap();
        for i in 0..d {
            assert_abs_diff_eq!(fit.spline.coefficients()[i], truth[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn monotone_data_selects_boundary_modes() {
        let basis = build_basis(0.0, 1.0, 4, 2).unwrap();
        let xs = grid_sites(40, 0.0, 1.0);
        let design = basis.design_matrix(&xs).unwrap();
        let incr = DVector::from_fn(40, |i, _| xs[i] * 2.0);
        let penalty = PenaltySpec::ridge(design.ncols());
        let fit = fit_unimodal(&design, &incr, &penalty, 1.0, &LambdaPolicy::Fixed(0.0)).unwrap();
        assert_eq!(fit.mode, design.ncols());
        let decr = DVector::from_fn(40, |i, _| -xs[i] * 2.0 + 5.0);
        let fit = fit_unimodal(&design, &decr, &penalty, 1.0, &LambdaPolicy::Fixed(0.0)).unwrap();
        assert_eq!(fit.mode, 1);
    }

    #[test]
    fn returned_coefficients_are_feasible() {
        let mut rng = Lcg(99);
        let basis = build_basis(0.0, 1.0, 6, 3).unwrap();
        let xs = grid_sites(50, 0.0, 1.0);
        let design = basis.design_matrix(&xs).unwrap();
        let penalty = PenaltySpec::second_order_difference(design.ncols()).unwrap();
        for _ in 0..20 {
            let y = DVector::from_fn(50, |_, _| rng.next_f64() * 4.0 - 2.0);
            let fit = fit_unimodal(&design, &y, &penalty, 1.0, &LambdaPolicy::Fixed(0.5)).unwrap();
            assert!(cone_violation(fit.spline.coefficients(), fit.mode) <= 1e-9);
            let recomputed = (&y - fit.fitted_values(&design)).norm_squared();
            assert_abs_diff_eq!(recomputed, fit.rss, epsilon = 1e-8 * (1.0 + fit.rss));
        }
    }

    #[test]
    fn ridge_shrinkage_is_monotone_in_lambda() {
        let mut rng = Lcg(7);
        let basis = build_basis(0.0, 1.0, 5, 2).unwrap();
        let xs = grid_sites(40, 0.0, 1.0);
        let design = basis.design_matrix(&xs).unwrap();
        let penalty = PenaltySpec::ridge(design.ncols());
        let y = DVector::from_fn(40, |i, _| (xs[i] * 3.0).sin() + 0.2 * rng.next_f64());
        let grid = [1e-4, 1e-2, 1.0, 1e2, 1e4];
        let mut prev = f64::INFINITY;
        for &l in &grid {
            let beta = fit_fixed_mode(&design, &y, 3, &penalty, l, 1.0).unwrap();
            let norm = beta.norm();
            assert!(norm <= prev + 1e-10);
            prev = norm;
        }
        // Endpoint comparison on the full mode-searched fit.
        let lo = fit_unimodal(&design, &y, &penalty, 1.0, &LambdaPolicy::Fixed(1e-4)).unwrap();
        let hi = fit_unimodal(&design, &y, &penalty, 1.0, &LambdaPolicy::Fixed(1e6)).unwrap();
        assert!(hi.spline.coefficients().norm() < lo.spline.coefficients().norm());
    }

    #[test]
    fn unconstrained_optimum_in_cone_matches_ols() {
        let basis = build_basis(0.0, 1.0, 3, 2).unwrap();
        let d = basis.dim();
        let truth = DVector::from_vec(vec![0.0, 0.8, 1.5, 1.0, 0.4, 0.1]);
        assert_eq!(truth.len(), d);
        let xs = grid_sites(40, 0.0, 1.0);
        let design = basis.design_matrix(&xs).unwrap();
        let y = design.matrix() * &truth;
        let b = design.matrix();
        let ols = Cholesky::new(b.transpose() * b)
            .unwrap()
            .solve(&(b.transpose() * &y));
        let penalty = PenaltySpec::ridge(d);
        let fit = fit_unimodal(&design, &y, &penalty, 1.0, &LambdaPolicy::Fixed(0.0)).unwrap();
        for i in 0..d {
            assert_abs_diff_eq!(fit.spline.coefficients()[i], ols[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn reml_rejects_bad_grids() {
        let basis = build_basis(0.0, 1.0, 2, 1).unwrap();
        let xs = grid_sites(12, 0.0, 1.0);
        let design = basis.design_matrix(&xs).unwrap();
        let y = DVector::zeros(12);
        let penalty = PenaltySpec::ridge(design.ncols());
        assert!(matches!(
            reml_select_lambda(&design, &y, &penalty, 1.0, &[]),
            Err(UnimodalError::InvalidLambdaGrid)
        ));
        assert!(matches!(
            reml_select_lambda(&design, &y, &penalty, 1.0, &[0.0]),
            Err(UnimodalError::InvalidLambdaGrid)
        ));
    }

    #[test]
    fn dimension_errors_are_distinct_from_reml_failure() {
        let basis = build_basis(0.0, 1.0, 2, 1).unwrap();
        let xs = grid_sites(12, 0.0, 1.0);
        let design = basis.design_matrix(&xs).unwrap();
        let y_bad = DVector::zeros(5);
        let penalty = PenaltySpec::ridge(design.ncols());
        assert!(matches!(
            reml_select_lambda(&design, &y_bad, &penalty, 1.0, &[1.0]),
            Err(UnimodalError::ResponseLength { .. })
        ));
    }

    #[test]
    fn noiseless_data_drives_sigma_toward_zero() {
        let basis = build_basis(0.0, 1.0, 4, 3).unwrap();
        let d = basis.dim();
        let truth = DVector::from_vec(vec![0.0, 0.4, 1.1, 2.2, 1.5, 0.7, 0.2, 0.0]);
        assert_eq!(truth.len(), d);
        let xs = grid_sites(80, 0.0, 1.0);
        let design = basis.design_matrix(&xs).unwrap();
        let y = design.matrix() * &truth;
        let penalty = PenaltySpec::second_order_difference(d).unwrap();
        let fit = fit_with_sigma_iteration(&design, &y, &penalty, 2.0, 0.01, &LambdaPolicy::Reml(None))
            .unwrap();
        assert!(fit.sigma2 < 1e-4, "sigma2 = {}", fit.sigma2);
    }

    #[test]
    fn sigma_iteration_rejects_bad_inputs() {
        let basis = build_basis(0.0, 1.0, 2, 1).unwrap();
        let xs = grid_sites(12, 0.0, 1.0);
        let design = basis.design_matrix(&xs).unwrap();
        let y = DVector::zeros(12);
        let penalty = PenaltySpec::ridge(design.ncols());
        assert!(fit_with_sigma_iteration(&design, &y, &penalty, 0.0, 0.01, &LambdaPolicy::Reml(None)).is_err());
        assert!(fit_with_sigma_iteration(&design, &y, &penalty, 2.0, 0.0, &LambdaPolicy::Reml(None)).is_err());
    }
}
