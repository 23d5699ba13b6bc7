//! Additive unimodal regression: an intercept plus a sum of unimodal
//! spline components fitted by backfitting, with the component count
//! selected by AIC.

use crate::basis::{build_basis, BasisError, SplineFunction};
use crate::unimodal::{
    edf_unconstrained, fit_unimodal, LambdaPolicy, PenaltyKind, PenaltySpec, UnimodalError,
};
use nalgebra::DVector;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AdditiveError {
    #[error("x and y must be nonempty and of equal length (got {x} and {y})")]
    BadLengths { x: usize, y: usize },
    #[error("component count must be at least 1")]
    NoComponents,
    #[error("every candidate component count failed; last error: {0}")]
    AllCandidatesFailed(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Unimodal(#[from] UnimodalError),
}

/// Configuration shared by all components.
#[derive(Debug, Clone)]
pub struct AdditiveConfig {
    pub inner_knots: usize,
    pub degree: usize,
    pub penalty: PenaltyKind,
    pub sigma2: f64,
    /// Tuning policy; with REML the value selected on a component's first
    /// fit is kept fixed for its later refits, so each refit minimizes the
    /// same objective.
    pub lambda: LambdaPolicy,
    pub max_cycles: usize,
}

impl Default for AdditiveConfig {
    fn default() -> Self {
        Self {
            inner_knots: 10,
            degree: 3,
            penalty: PenaltyKind::SecondOrderDifference,
            sigma2: 1.0,
            lambda: LambdaPolicy::Reml(None),
            max_cycles: 50,
        }
    }
}

/// Fitted additive model.
#[derive(Debug, Clone)]
pub struct AdditiveFit {
    pub alpha: f64,
    pub components: Vec<SplineFunction>,
    pub modes: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub rss: f64,
    pub aic: f64,
    pub cycles: usize,
    pub converged: bool,
    /// Fitted values at the data sites.
    pub fitted: DVector<f64>,
}

impl AdditiveFit {
    pub fn component_count(&self) -> usize {
        self.components.len()
    }
}

fn build_penalty(kind: PenaltyKind, dim: usize) -> Result<PenaltySpec, UnimodalError> {
    match kind {
        PenaltyKind::Ridge => Ok(PenaltySpec::ridge(dim)),
        _ => PenaltySpec::second_order_difference(dim),
    }
}

/// Backfit `l` unimodal components plus an intercept.
///
/// Step 1 sets the intercept to the response mean and every component to
/// zero; step 2 refits component `l` on the partial residuals of the
/// others; step 3 centers each component around zero at the data sites;
/// step 4 repeats until the relative RSS change falls below 1e-6. Hitting
/// the cycle cap flags the fit instead of failing.
pub fn backfit(
    x: &[f64],
    y: &[f64],
    l: usize,
    config: &AdditiveConfig,
) -> Result<AdditiveFit, AdditiveError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(AdditiveError::BadLengths {
            x: x.len(),
            y: y.len(),
        });
    }
    if l == 0 {
        return Err(AdditiveError::NoComponents);
    }
    let n = x.len();
    let basis = build_basis(x[0], x[n - 1], config.inner_knots, config.degree)?;
    let d = basis.dim();
    let design = basis.design_matrix(x)?;
    let penalty = build_penalty(config.penalty, d)?;
    let yv = DVector::from_row_slice(y);

    let alpha = yv.mean();
    let y_range = {
        let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = y.iter().cloned().fold(f64::INFINITY, f64::min);
        (max - min).max(f64::MIN_POSITIVE)
    };

    let mut comp_fitted: Vec<DVector<f64>> = vec![DVector::zeros(n); l];
    let mut comp_prev: Vec<DVector<f64>> = vec![DVector::zeros(n); l];
    let mut comp_coeff: Vec<DVector<f64>> = vec![DVector::zeros(d); l];
    let mut modes = vec![1_usize; l];
    let mut lambdas: Vec<Option<f64>> = vec![None; l];
    let mut frozen = vec![false; l];

    let mut rss_prev = f64::INFINITY;
    let mut rss = {
        let total: DVector<f64> = DVector::from_element(n, alpha);
        (&yv - total).norm_squared()
    };
    let mut cycles = 0;
    let mut converged = false;

    while cycles < config.max_cycles {
        cycles += 1;
        for ell in 0..l {
            if frozen[ell] {
                continue;
            }
            let mut target = &yv - DVector::from_element(n, alpha);
            for (other, fitted) in comp_fitted.iter().enumerate() {
                if other != ell {
                    target -= fitted;
                }
            }
            let policy = match lambdas[ell] {
                Some(lam) => LambdaPolicy::Fixed(lam),
                None => config.lambda.clone(),
            };
            let fit = fit_unimodal(&design, &target, &penalty, config.sigma2, &policy)?;
            lambdas[ell] = Some(fit.lambda);
            modes[ell] = fit.mode;
            comp_fitted[ell] = fit.fitted_values(&design);
            comp_coeff[ell] = fit.spline.coefficients().clone();
        }

        // Center the component estimates around zero.
        for ell in 0..l {
            if frozen[ell] {
                continue;
            }
            let mean = comp_fitted[ell].mean();
            comp_fitted[ell].add_scalar_mut(-mean);
            comp_coeff[ell].add_scalar_mut(-mean);

            // A component whose fitted range has collapsed is frozen at
            // zero so two components cannot chase one bump indefinitely.
            let lo = comp_fitted[ell].min();
            let hi = comp_fitted[ell].max();
            if hi - lo < 1e-6 * y_range {
                frozen[ell] = true;
                comp_fitted[ell].fill(0.0);
                comp_coeff[ell].fill(0.0);
            }
        }

        let mut total = DVector::from_element(n, alpha);
        for fitted in &comp_fitted {
            total += fitted;
        }
        rss = (&yv - total).norm_squared();
        // The RSS stalls while mass can still drift between components
        // along fit-neutral directions, so convergence also requires the
        // component values themselves to have settled.
        let comp_change = comp_fitted
            .iter()
            .zip(&comp_prev)
            .map(|(now, before)| (now - before).amax())
            .fold(0.0_f64, f64::max);
        if (rss_prev - rss).abs() <= 1e-6 * rss.max(f64::MIN_POSITIVE)
            && comp_change <= 1e-5 * y_range
        {
            converged = true;
            break;
        }
        rss_prev = rss;
        for (before, now) in comp_prev.iter_mut().zip(&comp_fitted) {
            before.copy_from(now);
        }
    }

    let mut fitted = DVector::from_element(n, alpha);
    for comp in &comp_fitted {
        fitted += comp;
    }

    let lambdas: Vec<f64> = lambdas.into_iter().map(|v| v.unwrap_or(0.0)).collect();
    let mut edf = 1.0;
    for &lam in &lambdas {
        edf += edf_unconstrained(&design, &penalty, lam, config.sigma2)?;
    }
    let aic = n as f64 * (rss / n as f64).max(f64::MIN_POSITIVE).ln() + 2.0 * edf;

    let components = comp_coeff
        .into_iter()
        .map(|c| SplineFunction::new(basis.clone(), c).expect("dimension checked by construction"))
        .collect();
    Ok(AdditiveFit {
        alpha,
        components,
        modes,
        lambdas,
        rss,
        aic,
        cycles,
        converged,
        fitted,
    })
}

/// Fit every `L = 1..=l_max` and return the fit with the smallest AIC;
/// ties go to the smaller component count.
pub fn select_l_by_aic(
    x: &[f64],
    y: &[f64],
    l_max: usize,
    config: &AdditiveConfig,
) -> Result<AdditiveFit, AdditiveError> {
    if l_max == 0 {
        return Err(AdditiveError::NoComponents);
    }
    let mut best: Option<AdditiveFit> = None;
    let mut last_err = String::new();
    for l in 1..=l_max {
        match backfit(x, y, l, config) {
            Ok(fit) => {
                if best.as_ref().map_or(true, |b| fit.aic < b.aic) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    best.ok_or(AdditiveError::AllCandidatesFailed(last_err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unimodal::cone_violation;
    use approx::assert_abs_diff_eq;

    fn sites(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn constant_data_gives_intercept_only() {
        let x = sites(40);
        let y = vec![3.5; 40];
        let config = AdditiveConfig {
            inner_knots: 5,
            sigma2: 0.5,
            ..AdditiveConfig::default()
        };
        let fit = backfit(&x, &y, 2, &config).unwrap();
        assert_abs_diff_eq!(fit.alpha, 3.5, epsilon = 1e-12);
        for comp in &fit.components {
            assert!(comp.coefficients().amax() < 1e-6);
        }
        assert!(fit.rss < 1e-10);
    }

    #[test]
    fn single_component_matches_plain_unimodal_fit() {
        let x = sites(60);
        let y: Vec<f64> = x
            .iter()
            .map(|&t| 2.0 * (std::f64::consts::PI * t).sin() + 1.0)
            .collect();
        let config = AdditiveConfig {
            inner_knots: 8,
            sigma2: 0.01,
            lambda: LambdaPolicy::Reml(None),
            ..AdditiveConfig::default()
        };
        let fit = backfit(&x, &y, 1, &config).unwrap();

        let basis = build_basis(x[0], x[59], 8, 3).unwrap();
        let design = basis.design_matrix(&x).unwrap();
        let penalty = PenaltySpec::second_order_difference(basis.dim()).unwrap();
        let direct = fit_unimodal(
            &design,
            &DVector::from_row_slice(&y),
            &penalty,
            0.01,
            &LambdaPolicy::Reml(None),
        )
        .unwrap();
        let direct_fitted = direct.fitted_values(&design);
        for i in 0..60 {
            assert_abs_diff_eq!(fit.fitted[i], direct_fitted[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn two_separated_bumps_are_recovered() {
        let x = sites(120);
        let bump = |t: f64, c: f64, w: f64, h: f64| h * (-(t - c) * (t - c) / (2.0 * w * w)).exp();
        let g1: Vec<f64> = x.iter().map(|&t| bump(t, 0.25, 0.06, 1.0)).collect();
        let g2: Vec<f64> = x.iter().map(|&t| bump(t, 0.75, 0.08, 1.0)).collect();
        let y: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
        // The near-flat exchange directions between the two components
        // drain slowly, so the cycle budget is generous.
        let config = AdditiveConfig {
            inner_knots: 20,
            penalty: PenaltyKind::Ridge,
            sigma2: 1e-3,
            max_cycles: 2000,
            ..AdditiveConfig::default()
        };
        let fit = backfit(&x, &y, 2, &config).unwrap();
        assert!(fit.converged);
        // Per-component RMSE against the generator truth, up to the mean
        // shift moved into the intercept and a possible label swap.
        let rmse_against = |comp: &SplineFunction, truth: &[f64]| -> f64 {
            let vals: Vec<f64> = x.iter().map(|&t| comp.eval(t).unwrap()).collect();
            let t_mean = truth.iter().sum::<f64>() / truth.len() as f64;
            let mse = vals
                .iter()
                .zip(truth)
                .map(|(v, t)| {
                    let diff = v - (t - t_mean);
                    diff * diff
                })
                .sum::<f64>()
                / truth.len() as f64;
            mse.sqrt()
        };
        let direct = (
            rmse_against(&fit.components[0], &g1),
            rmse_against(&fit.components[1], &g2),
        );
        let swapped = (
            rmse_against(&fit.components[0], &g2),
            rmse_against(&fit.components[1], &g1),
        );
        let (a, b) = if direct.0 + direct.1 <= swapped.0 + swapped.1 {
            direct
        } else {
            swapped
        };
        assert!(a <= 0.02 && b <= 0.02, "component RMSEs: {a:.4}, {b:.4}");
        for (comp, &mode) in fit.components.iter().zip(&fit.modes) {
            assert!(cone_violation(comp.coefficients(), mode) <= 1e-9);
        }
        // Components are centered at the data sites.
        for comp in &fit.components {
            let mean: f64 = x.iter().map(|&t| comp.eval(t).unwrap()).sum::<f64>() / 120.0;
            assert!(mean.abs() < 1e-8);
        }
        // Reconstruction identity.
        for i in 0..120 {
            let total: f64 = fit.alpha
                + fit
                    .components
                    .iter()
                    .map(|c| c.eval(x[i]).unwrap())
                    .sum::<f64>();
            assert_abs_diff_eq!(total, fit.fitted[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn aic_with_single_candidate_returns_it() {
        let x = sites(50);
        let y: Vec<f64> = x.iter().map(|&t| (std::f64::consts::PI * t).sin()).collect();
        let config = AdditiveConfig {
            inner_knots: 6,
            sigma2: 0.01,
            ..AdditiveConfig::default()
        };
        let fit = select_l_by_aic(&x, &y, 1, &config).unwrap();
        assert_eq!(fit.component_count(), 1);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let config = AdditiveConfig::default();
        assert!(backfit(&[], &[], 1, &config).is_err());
        assert!(backfit(&[0.0, 1.0], &[1.0, 2.0], 0, &config).is_err());
        assert!(select_l_by_aic(&[0.0, 1.0], &[1.0, 2.0], 0, &config).is_err());
    }
}
