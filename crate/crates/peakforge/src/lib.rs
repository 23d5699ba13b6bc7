//! Unimodal penalized spline regression and its multimodal extensions:
//! piecewise fitting, L0-penalized deconvolution with fixed, parametric,
//! and blind unimodal peak shapes, additive backfitting, and deconvolution
//! with diverse per-mode peak shapes, plus a CLI harness for synthetic
//! data, method recommendation, and report emission.

pub mod additive;
pub mod basis;
pub mod deconv;
pub mod io;
pub mod piecewise;
pub mod recommend;
pub mod runner;
pub mod synth;
mod qp;
pub mod unimodal;
pub mod varying;

pub use basis::{build_basis, eval_basis, BSplineBasis, DesignMatrix, SplineFunction};
pub use unimodal::{
    default_lambda_grid, fit_fixed_mode, fit_unimodal, fit_with_sigma_iteration,
    reml_select_lambda, LambdaPolicy, PenaltyKind, PenaltySpec, UnimodalFit,
};
