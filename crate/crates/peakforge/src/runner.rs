//! Execution harness: validated run configurations, method dispatch, and
//! report bundles (fitted-values CSV, flat key=value summary, and
//! plot-data files for the observed series, per-peak curves and pulse
//! bars).

use crate::additive::{select_l_by_aic, AdditiveConfig};
use crate::basis::build_basis;
use crate::deconv::{
    blind_deconv, build_conv_matrix, l0_fit_pulses, preprocess_signal, wave_eval, BlindOptions,
    PeakShape, PulseSolution, ScaleRecord, WaveParams,
};
use crate::io::{write_atomic, IoError, SignalRecord};
use crate::piecewise::{
    classify_phases, fit_piecewise, segment_by_threshold, PieceConfig, Sigma2Policy,
};
use crate::recommend::Method;
use crate::unimodal::{fit_unimodal, fit_with_sigma_iteration, LambdaPolicy, PenaltyKind, PenaltySpec};
use crate::varying::{estimate_noise_from_window, varying_l0_fit};
use nalgebra::DVector;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum RunError {
    /// Bad configuration or data; nothing was fitted.
    #[error("invalid configuration: {0}")]
    Validation(String),
    /// A fit failed numerically.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// How the error variance is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum Sigma2Spec {
    /// Method-specific default (iterated from 2 where iteration applies).
    Default,
    Fixed(f64),
    Iterate { init: f64, abstol: f64 },
    /// 1-based inclusive observation window presumed peak-free.
    Window { lo: usize, hi: usize },
}

/// A validated run request.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    pub inner_knots: Option<usize>,
    pub degree: usize,
    pub kappa: Option<f64>,
    pub lambda: LambdaPolicy,
    pub penalty: Option<PenaltyKind>,
    pub threshold: Option<f64>,
    pub sigma2: Sigma2Spec,
    pub components: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Number of samples of the deconvolution peak shape.
    pub shape_samples: usize,
    /// Wave parameters for known or initial parametric shapes.
    pub wave: WaveParams,
    pub max_outer: usize,
}

impl RunConfig {
    pub fn new(method: Method, output_dir: PathBuf) -> Self {
        Self {
            method,
            inner_knots: None,
            degree: 3,
            kappa: None,
            lambda: LambdaPolicy::Reml(None),
            penalty: None,
            threshold: None,
            sigma2: Sigma2Spec::Default,
            components: 3,
            seed: 1,
            output_dir,
            shape_samples: 151,
            wave: WaveParams::new(17.41, 4.745, 31.81).expect("positive parameters"),
            max_outer: 30,
        }
    }

    pub fn inner_knots(&self) -> usize {
        self.inner_knots.unwrap_or(match self.method {
            Method::UniReg | Method::PUniReg => 25,
            Method::AddUni => 10,
            Method::VaryingL0Deco => 200,
            _ => 10,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa.unwrap_or(match self.method {
            Method::VaryingL0Deco => 0.002,
            _ => crate::deconv::DEFAULT_KAPPA,
        })
    }

    pub fn penalty_kind(&self) -> PenaltyKind {
        self.penalty.unwrap_or(match self.method {
            Method::UniReg | Method::PUniReg => PenaltyKind::SecondOrderDifference,
            _ => PenaltyKind::Ridge,
        })
    }

    /// Check the configuration against the chosen method's preconditions
    /// before any fit runs.
    pub fn validate(&self, record: &SignalRecord) -> Result<(), RunError> {
        let n = record.len();
        let q = self.inner_knots();
        let k = self.degree;
        if k < 1 || k > 5 {
            return Err(RunError::Validation(format!(
                "spline degree must be in 1..=5, got {k}"
            )));
        }
        let d = q + k + 1;
        let uses_basis_on_x = matches!(
            self.method,
            Method::UniReg | Method::AddUni | Method::VaryingL0Deco
        );
        if uses_basis_on_x && d > n {
            return Err(RunError::Validation(format!(
                "basis dimension {d} exceeds the {n} observations"
            )));
        }
        if let Some(kappa) = self.kappa {
            if !(kappa.is_finite() && kappa > 0.0) {
                return Err(RunError::Validation(format!(
                    "kappa must be positive, got {kappa}"
                )));
            }
        }
        if let LambdaPolicy::Fixed(v) = self.lambda {
            if !(v.is_finite() && v >= 0.0) {
                return Err(RunError::Validation(format!(
                    "fixed lambda must be nonnegative, got {v}"
                )));
            }
        }
        match self.method {
            Method::PUniReg => {
                if self.threshold.is_none() {
                    return Err(RunError::Validation(
                        "punireg needs --threshold to split the axis".into(),
                    ));
                }
            }
            Method::L0Deco
            | Method::BlindPointwise
            | Method::BlindParametric
            | Method::BlindUnimodal => {
                let ng = self.shape_samples;
                if ng < 2 || ng > n {
                    return Err(RunError::Validation(format!(
                        "shape sample count {ng} must lie in 2..={n}"
                    )));
                }
            }
            Method::AddUni => {
                if self.components < 1 {
                    return Err(RunError::Validation(
                        "adduni needs at least one component".into(),
                    ));
                }
            }
            _ => {}
        }
        match &self.sigma2 {
            Sigma2Spec::Fixed(v) if !(v.is_finite() && *v > 0.0) => {
                return Err(RunError::Validation(format!(
                    "fixed sigma^2 must be positive, got {v}"
                )));
            }
            Sigma2Spec::Iterate { init, abstol }
                if !(init.is_finite() && *init > 0.0 && abstol.is_finite() && *abstol > 0.0) =>
            {
                return Err(RunError::Validation(
                    "sigma^2 iteration needs positive init and abstol".into(),
                ));
            }
            Sigma2Spec::Window { lo, hi } => {
                if *lo < 1 || lo >= hi || *hi > n {
                    return Err(RunError::Validation(format!(
                        "noise window {lo}..{hi} is not a valid 1-based range for {n} rows"
                    )));
                }
            }
            Sigma2Spec::Default
                if matches!(self.method, Method::AddUni | Method::VaryingL0Deco) =>
            {
                return Err(RunError::Validation(format!(
                    "{} needs an explicit --sigma2-policy (fixed:<v> or window:<lo>:<hi>)",
                    self.method
                )));
            }
            _ => {}
        }
        Ok(())
    }

    /// Resolve the variance policy to something the fits can consume.
    fn resolve_sigma2(&self, record: &SignalRecord) -> Result<Sigma2Policy, RunError> {
        match &self.sigma2 {
            Sigma2Spec::Fixed(v) => Ok(Sigma2Policy::Fixed(*v)),
            Sigma2Spec::Iterate { init, abstol } => Ok(Sigma2Policy::Iterate {
                init: *init,
                abstol: *abstol,
            }),
            Sigma2Spec::Window { lo, hi } => {
                let var = estimate_noise_from_window(&record.y, (lo - 1)..*hi)
                    .map_err(|e| RunError::Numerical(e.to_string()))?;
                Ok(Sigma2Policy::Fixed(var))
            }
            Sigma2Spec::Default => Ok(Sigma2Policy::Iterate {
                init: 2.0,
                abstol: 0.01,
            }),
        }
    }
}

/// Everything a finished run reports back.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: Vec<(String, String)>,
    pub files: Vec<PathBuf>,
    pub converged: bool,
}

impl RunReport {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.summary
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn fmt_list(values: impl IntoIterator<Item = f64>) -> String {
    let parts: Vec<String> = values.into_iter().map(|v| format!("{v}")).collect();
    parts.join(",")
}

fn fmt_list_usize(values: impl IntoIterator<Item = usize>) -> String {
    let parts: Vec<String> = values.into_iter().map(|v| format!("{v}")).collect();
    parts.join(",")
}

/// Columnar CSV writer where missing cells stay empty.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    fn new(header: Vec<String>, nrows: usize) -> Self {
        let cols = header.len();
        Self {
            header,
            rows: vec![vec![None; cols]; nrows],
        }
    }

    fn set(&mut self, row: usize, col: usize, value: f64) {
        self.rows[row][col] = Some(value);
    }

    fn write(&self, path: &Path) -> Result<(), IoError> {
        let mut text = self.header.join(",");
        text.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| c.map(|v| format!("{v}")).unwrap_or_default())
                .collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        write_atomic(path, text.as_bytes())
    }
}

struct Bundle {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Bundle {
    fn new(dir: &Path) -> Result<Self, RunError> {
        std::fs::create_dir_all(dir).map_err(|source| {
            RunError::Io(IoError::Unwritable {
                path: dir.to_path_buf(),
                source,
            })
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn add_table(&mut self, name: &str, table: &Table) -> Result<(), RunError> {
        let path = self.path(name);
        table.write(&path)?;
        self.files.push(path);
        Ok(())
    }

    fn add_summary(&mut self, pairs: &[(String, String)]) -> Result<(), RunError> {
        let mut text = String::new();
        for (k, v) in pairs {
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        let path = self.path("summary.txt");
        write_atomic(&path, text.as_bytes())?;
        self.files.push(path);
        Ok(())
    }

    /// Remove everything written so far (on failure).
    fn discard(&self) {
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
    }
}

/// Execute the configured method and write the report bundle. Partial
/// outputs are removed when the method fails.
pub fn run(config: &RunConfig, record: &SignalRecord) -> Result<RunReport, RunError> {
    config.validate(record)?;
    let mut bundle = Bundle::new(&config.output_dir)?;
    let result = dispatch(config, record, &mut bundle);
    if result.is_err() {
        bundle.discard();
    }
    result
}

fn dispatch(
    config: &RunConfig,
    record: &SignalRecord,
    bundle: &mut Bundle,
) -> Result<RunReport, RunError> {
    let mut summary: Vec<(String, String)> = vec![
        ("method".into(), config.method.to_string()),
        ("n".into(), record.len().to_string()),
        ("seed".into(), config.seed.to_string()),
    ];
    let converged = match config.method {
        Method::UniReg => run_unireg(config, record, bundle, &mut summary)?,
        Method::PUniReg => run_punireg(config, record, bundle, &mut summary)?,
        Method::L0Deco => run_l0deco(config, record, bundle, &mut summary)?,
        Method::BlindPointwise | Method::BlindParametric | Method::BlindUnimodal => {
            run_blind(config, record, bundle, &mut summary)?
        }
        Method::AddUni => run_adduni(config, record, bundle, &mut summary)?,
        Method::VaryingL0Deco => run_varying(config, record, bundle, &mut summary)?,
    };
    summary.push(("converged".into(), converged.to_string()));
    bundle.add_summary(&summary)?;
    Ok(RunReport {
        summary,
        files: bundle.files.clone(),
        converged,
    })
}

fn numerical<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Numerical(e.to_string())
}

fn build_penalty(kind: PenaltyKind, dim: usize) -> Result<PenaltySpec, RunError> {
    match kind {
        PenaltyKind::Ridge => Ok(PenaltySpec::ridge(dim)),
        _ => PenaltySpec::second_order_difference(dim).map_err(numerical),
    }
}

fn run_unireg(
    config: &RunConfig,
    record: &SignalRecord,
    bundle: &mut Bundle,
    summary: &mut Vec<(String, String)>,
) -> Result<bool, RunError> {
    let n = record.len();
    let basis = build_basis(record.x[0], record.x[n - 1], config.inner_knots(), config.degree)
        .map_err(numerical)?;
    let design = basis.design_matrix(&record.x).map_err(numerical)?;
    let penalty = build_penalty(config.penalty_kind(), basis.dim())?;
    let y = DVector::from_row_slice(&record.y);
    let fit = match config.resolve_sigma2(record)? {
        Sigma2Policy::Fixed(s2) => {
            fit_unimodal(&design, &y, &penalty, s2, &config.lambda).map_err(numerical)?
        }
        Sigma2Policy::Iterate { init, abstol } => {
            fit_with_sigma_iteration(&design, &y, &penalty, init, abstol, &config.lambda)
                .map_err(numerical)?
        }
    };
    let fitted = fit.fitted_values(&design);

    let mut table = Table::new(vec!["x".into(), "y".into(), "fit".into()], n);
    for i in 0..n {
        table.set(i, 0, record.x[i]);
        table.set(i, 1, record.y[i]);
        table.set(i, 2, fitted[i]);
    }
    bundle.add_table("fitted.csv", &table)?;

    let peak = (0..n).fold(0, |best, i| if fitted[i] > fitted[best] { i } else { best });
    summary.push(("peak_count".into(), "1".to_string()));
    summary.push(("locations".into(), format!("{}", record.x[peak])));
    summary.push(("heights".into(), format!("{}", fitted[peak])));
    summary.push(("modes".into(), fit.mode.to_string()));
    summary.push(("lambda".into(), format!("{}", fit.lambda)));
    summary.push(("sigma2".into(), format!("{}", fit.sigma2)));
    summary.push(("rss".into(), format!("{}", fit.rss)));
    Ok(true)
}

fn run_punireg(
    config: &RunConfig,
    record: &SignalRecord,
    bundle: &mut Bundle,
    summary: &mut Vec<(String, String)>,
) -> Result<bool, RunError> {
    let n = record.len();
    let threshold = config.threshold.expect("validated");
    let q = config.inner_knots();
    let d = q + config.degree + 1;
    let segments =
        segment_by_threshold(&record.x, &record.y, threshold, d).map_err(numerical)?;
    let piece_config = PieceConfig {
        inner_knots: q,
        degree: config.degree,
        penalty: config.penalty_kind(),
        lambda: config.lambda.clone(),
        sigma2: config.resolve_sigma2(record)?,
    };
    let fitted_segments =
        fit_piecewise(&record.x, &record.y, segments, &piece_config).map_err(numerical)?;

    let mut table = Table::new(vec!["x".into(), "y".into(), "fit".into()], n);
    for i in 0..n {
        table.set(i, 0, record.x[i]);
        table.set(i, 1, record.y[i]);
    }
    let mut seg_rows = Table::new(
        vec![
            "segment".into(),
            "x_lo".into(),
            "x_hi".into(),
            "turning_point".into(),
            "mode".into(),
            "lambda".into(),
            "sigma2".into(),
            "rss".into(),
        ],
        fitted_segments.len(),
    );
    let mut ok_count = 0usize;
    let mut turning_points = Vec::new();
    let mut rss_total = 0.0;
    let mut all_ok = true;
    for (s, seg) in fitted_segments.iter().enumerate() {
        seg_rows.set(s, 0, s as f64);
        seg_rows.set(s, 1, seg.x_lo);
        seg_rows.set(s, 2, seg.x_hi);
        if let Some(fit) = &seg.fit {
            ok_count += 1;
            rss_total += fit.rss;
            let sub_design = build_basis(seg.x_lo, seg.x_hi, q, config.degree)
                .and_then(|b| b.design_matrix(&record.x[seg.indices.clone()]))
                .map_err(numerical)?;
            let values = fit.fitted_values(&sub_design);
            for (offset, i) in seg.indices.clone().enumerate() {
                table.set(i, 2, values[offset]);
            }
            if let Some(labels) = classify_phases(&record.x, seg).map_err(numerical)? {
                turning_points.push(labels.turning_point);
                seg_rows.set(s, 3, labels.turning_point);
            }
            seg_rows.set(s, 4, fit.mode as f64);
            seg_rows.set(s, 5, fit.lambda);
            seg_rows.set(s, 6, fit.sigma2);
            seg_rows.set(s, 7, fit.rss);
        } else {
            all_ok = false;
        }
    }
    bundle.add_table("fitted.csv", &table)?;
    bundle.add_table("segments.csv", &seg_rows)?;

    summary.push(("threshold".into(), format!("{threshold}")));
    summary.push(("segment_count".into(), fitted_segments.len().to_string()));
    summary.push(("peak_count".into(), ok_count.to_string()));
    summary.push(("turning_points".into(), fmt_list(turning_points)));
    summary.push((
        "modes".into(),
        fmt_list_usize(
            fitted_segments
                .iter()
                .filter_map(|s| s.fit.as_ref().map(|f| f.mode)),
        ),
    ));
    summary.push(("rss".into(), format!("{rss_total}")));
    for (s, seg) in fitted_segments.iter().enumerate() {
        if let Some(failure) = &seg.failure {
            summary.push((format!("segment_{s}_error"), failure.clone()));
        }
    }
    Ok(all_ok)
}

/// Shared output emission for the fixed-shape and blind deconvolutions.
fn emit_pulse_outputs(
    record: &SignalRecord,
    shape_norm: &[f64],
    sol: &PulseSolution,
    scale: &ScaleRecord,
    bundle: &mut Bundle,
    summary: &mut Vec<(String, String)>,
) -> Result<(), RunError> {
    let n = record.len();
    let n_g = shape_norm.len();
    let active = sol.nonzero_indices();
    let dx = if n > 1 { record.x[1] - record.x[0] } else { 1.0 };

    let mut header = vec!["x".into(), "y".into(), "fit".into()];
    for (idx, _) in active.iter().enumerate() {
        header.push(format!("comp_{}", idx + 1));
    }
    let mut table = Table::new(header, n);
    for i in 0..n {
        table.set(i, 0, record.x[i]);
        table.set(i, 1, record.y[i]);
        table.set(i, 2, scale.value(sol.fitted[i]));
    }
    // Individual back-transformed peak curves: shifted copies of the
    // shape scaled by their pulse heights (heights are already on the
    // preprocessed scale; multiply by the data range only).
    for (col, &c) in active.iter().enumerate() {
        let height = sol.pulses[c];
        let start = c as isize - (n_g as isize - 1);
        for j in 0..n_g {
            let i = start + j as isize;
            if (0..n as isize).contains(&i) {
                table.set(i as usize, 3 + col, scale.amplitude(height * shape_norm[j]));
            }
        }
    }
    bundle.add_table("fitted.csv", &table)?;

    let mut pulses = Table::new(vec!["x".into(), "height".into()], active.len());
    let mut locations = Vec::new();
    let mut heights = Vec::new();
    for (row, &c) in active.iter().enumerate() {
        let offset = c as isize - (n_g as isize - 1);
        let x_pos = record.x[0] + offset as f64 * dx;
        let height = scale.amplitude(sol.pulses[c]);
        pulses.set(row, 0, x_pos);
        pulses.set(row, 1, height);
        locations.push(x_pos);
        heights.push(height);
    }
    bundle.add_table("pulses.csv", &pulses)?;

    let rss: f64 = (0..n)
        .map(|i| {
            let fit = scale.value(sol.fitted[i]);
            (record.y[i] - fit) * (record.y[i] - fit)
        })
        .sum();
    summary.push(("peak_count".into(), sol.nonzero_count.to_string()));
    summary.push(("locations".into(), fmt_list(locations)));
    summary.push(("heights".into(), fmt_list(heights)));
    summary.push(("kappa".into(), format!("{}", sol.kappa)));
    summary.push(("rss".into(), format!("{rss}")));
    Ok(())
}

fn run_l0deco(
    config: &RunConfig,
    record: &SignalRecord,
    bundle: &mut Bundle,
    summary: &mut Vec<(String, String)>,
) -> Result<bool, RunError> {
    let (ys, scale) = preprocess_signal(&record.y).map_err(numerical)?;
    let shape = PeakShape::ParametricWave {
        params: config.wave,
        n_g: config.shape_samples,
    };
    let norm = shape.normalized_values().map_err(numerical)?;
    let g = build_conv_matrix(&norm, record.len()).map_err(numerical)?;
    let sol = l0_fit_pulses(&g, &ys, config.kappa()).map_err(numerical)?;
    emit_pulse_outputs(record, &norm, &sol, &scale, bundle, summary)?;
    summary.push(("wave_u0".into(), format!("{}", config.wave.u0)));
    summary.push(("wave_xi1".into(), format!("{}", config.wave.xi1)));
    summary.push(("wave_xi2".into(), format!("{}", config.wave.xi2)));
    Ok(sol.converged)
}

fn run_blind(
    config: &RunConfig,
    record: &SignalRecord,
    bundle: &mut Bundle,
    summary: &mut Vec<(String, String)>,
) -> Result<bool, RunError> {
    let (ys, scale) = preprocess_signal(&record.y).map_err(numerical)?;
    let n_g = config.shape_samples;
    let spline_sigma2 = match config.resolve_sigma2(record)? {
        Sigma2Policy::Fixed(v) => v,
        Sigma2Policy::Iterate { .. } => 1e-3,
    };
    let initial = match config.method {
        Method::BlindPointwise => PeakShape::Tabulated(
            (0..n_g).map(|t| wave_eval(t as f64, &config.wave)).collect(),
        ),
        Method::BlindParametric => PeakShape::ParametricWave {
            params: config.wave,
            n_g,
        },
        Method::BlindUnimodal => {
            // Fit a unimodal spline to the initial wave samples so the
            // shape update has a basis to work on.
            let sites: Vec<f64> = (0..n_g).map(|t| t as f64).collect();
            let target =
                DVector::from_fn(n_g, |t, _| wave_eval(t as f64, &config.wave));
            let q = config.inner_knots().min(n_g.saturating_sub(config.degree + 1));
            let basis =
                build_basis(0.0, (n_g - 1) as f64, q, config.degree).map_err(numerical)?;
            let design = basis.design_matrix(&sites).map_err(numerical)?;
            let penalty = PenaltySpec::ridge(basis.dim());
            let fit = fit_unimodal(&design, &target, &penalty, spline_sigma2, &config.lambda)
                .map_err(numerical)?;
            PeakShape::UnimodalSpline {
                spline: fit.spline,
                n_g,
            }
        }
        _ => unreachable!("run_blind dispatches blind methods only"),
    };
    let options = BlindOptions {
        kappa: config.kappa(),
        max_outer: config.max_outer,
        spline_sigma2,
        spline_lambda: config.lambda.clone(),
    };
    let result = blind_deconv(&ys, &initial, &options).map_err(numerical)?;

    let norm = result.shape.normalized_values().map_err(numerical)?;
    emit_pulse_outputs(record, &norm, &result.pulses, &scale, bundle, summary)?;

    let shape_values = result.shape.values().map_err(numerical)?;
    let mut shape_table = Table::new(vec!["t".into(), "g".into()], shape_values.len());
    for (t, v) in shape_values.iter().enumerate() {
        shape_table.set(t, 0, t as f64);
        shape_table.set(t, 1, *v);
    }
    bundle.add_table("shape.csv", &shape_table)?;

    summary.push((
        "outer_iterations".into(),
        result.outer_iterations.to_string(),
    ));
    if let PeakShape::ParametricWave { params, .. } = &result.shape {
        summary.push(("wave_u0".into(), format!("{}", params.u0)));
        summary.push(("wave_xi1".into(), format!("{}", params.xi1)));
        summary.push(("wave_xi2".into(), format!("{}", params.xi2)));
    }
    if result.shape_update_skipped {
        summary.push(("shape_update_skipped".into(), "true".into()));
    }
    Ok(result.converged)
}

fn run_adduni(
    config: &RunConfig,
    record: &SignalRecord,
    bundle: &mut Bundle,
    summary: &mut Vec<(String, String)>,
) -> Result<bool, RunError> {
    let sigma2 = match config.resolve_sigma2(record)? {
        Sigma2Policy::Fixed(v) => v,
        Sigma2Policy::Iterate { .. } => unreachable!("validation requires fixed or window"),
    };
    let add_config = AdditiveConfig {
        inner_knots: config.inner_knots(),
        degree: config.degree,
        penalty: config.penalty_kind(),
        sigma2,
        lambda: config.lambda.clone(),
        max_cycles: 200,
    };
    let fit =
        select_l_by_aic(&record.x, &record.y, config.components, &add_config).map_err(numerical)?;

    let n = record.len();
    let l = fit.component_count();
    let mut header = vec!["x".into(), "y".into(), "fit".into()];
    for ell in 0..l {
        header.push(format!("comp_{}", ell + 1));
    }
    let mut table = Table::new(header, n);
    for i in 0..n {
        table.set(i, 0, record.x[i]);
        table.set(i, 1, record.y[i]);
        table.set(i, 2, fit.fitted[i]);
        for (ell, comp) in fit.components.iter().enumerate() {
            table.set(i, 3 + ell, comp.eval(record.x[i]).map_err(numerical)?);
        }
    }
    bundle.add_table("fitted.csv", &table)?;

    summary.push(("peak_count".into(), l.to_string()));
    summary.push(("alpha".into(), format!("{}", fit.alpha)));
    summary.push(("modes".into(), fmt_list_usize(fit.modes.iter().copied())));
    summary.push(("lambdas".into(), fmt_list(fit.lambdas.iter().copied())));
    summary.push(("aic".into(), format!("{}", fit.aic)));
    summary.push(("sigma2".into(), format!("{sigma2}")));
    summary.push(("cycles".into(), fit.cycles.to_string()));
    summary.push(("rss".into(), format!("{}", fit.rss)));
    Ok(fit.converged)
}

fn run_varying(
    config: &RunConfig,
    record: &SignalRecord,
    bundle: &mut Bundle,
    summary: &mut Vec<(String, String)>,
) -> Result<bool, RunError> {
    let sigma2 = match config.resolve_sigma2(record)? {
        Sigma2Policy::Fixed(v) => v,
        Sigma2Policy::Iterate { .. } => unreachable!("validation requires fixed or window"),
    };
    let result = varying_l0_fit(
        &record.x,
        &record.y,
        config.inner_knots(),
        config.degree,
        config.kappa(),
        sigma2,
    )
    .map_err(numerical)?;

    let n = record.len();
    let active = &result.active_set;
    let mut header = vec!["x".into(), "y".into(), "fit".into()];
    for (idx, _) in active.iter().enumerate() {
        header.push(format!("comp_{}", idx + 1));
    }
    let mut table = Table::new(header, n);
    for i in 0..n {
        table.set(i, 0, record.x[i]);
        table.set(i, 1, record.y[i]);
        table.set(
            i,
            2,
            result.fitted[i] * result.y_scale + result.y_shift,
        );
        for (col, &j) in active.iter().enumerate() {
            table.set(
                i,
                3 + col,
                result.a_hat[j] * result.g_hat[(i, j)] * result.y_scale,
            );
        }
    }
    bundle.add_table("fitted.csv", &table)?;

    let locations = result.peak_locations(&record.x);
    let heights: Vec<f64> = active
        .iter()
        .map(|&j| result.a_hat[j] * result.y_scale)
        .collect();
    let mut pulses = Table::new(vec!["x".into(), "height".into()], active.len());
    for row in 0..active.len() {
        pulses.set(row, 0, locations[row]);
        pulses.set(row, 1, heights[row]);
    }
    bundle.add_table("pulses.csv", &pulses)?;

    let rss: f64 = (0..n)
        .map(|i| {
            let fit = result.fitted[i] * result.y_scale + result.y_shift;
            (record.y[i] - fit) * (record.y[i] - fit)
        })
        .sum();
    summary.push(("peak_count".into(), active.len().to_string()));
    summary.push(("locations".into(), fmt_list(locations)));
    summary.push(("heights".into(), fmt_list(heights)));
    summary.push(("modes".into(), fmt_list_usize(active.iter().map(|&j| j + 1))));
    summary.push(("kappa".into(), format!("{}", config.kappa())));
    summary.push(("sigma2".into(), format!("{sigma2}")));
    summary.push(("iterations".into(), result.iterations.to_string()));
    summary.push(("rss".into(), format!("{rss}")));
    Ok(result.converged)
}

/// One row of a kappa sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub kappa: f64,
    pub peak_count: Option<usize>,
    pub rss: Option<f64>,
    pub error: Option<String>,
}

/// Run the configured deconvolution once per grid value and tabulate peak
/// count and RSS; per-kappa failures become rows and the sweep continues.
pub fn kappa_sweep(
    config: &RunConfig,
    record: &SignalRecord,
    grid: &[f64],
) -> Result<Vec<SweepRow>, RunError> {
    if grid.is_empty() {
        return Err(RunError::Validation("kappa grid must be nonempty".into()));
    }
    if grid.iter().any(|&k| !(k.is_finite() && k > 0.0)) {
        return Err(RunError::Validation(
            "kappa grid entries must be positive".into(),
        ));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RunError::Validation(
            "kappa grid must be strictly ascending".into(),
        ));
    }
    if !matches!(
        config.method,
        Method::L0Deco
            | Method::BlindPointwise
            | Method::BlindParametric
            | Method::BlindUnimodal
            | Method::VaryingL0Deco
    ) {
        return Err(RunError::Validation(format!(
            "kappa sweep applies to deconvolution methods, not {}",
            config.method
        )));
    }
    config.validate(record)?;

    let mut rows = Vec::with_capacity(grid.len());
    for &kappa in grid {
        let mut sub = config.clone();
        sub.kappa = Some(kappa);
        sub.output_dir = config.output_dir.join(format!("kappa-{kappa}"));
        match run(&sub, record) {
            Ok(report) => {
                let peak_count = report
                    .get("peak_count")
                    .and_then(|v| v.parse::<usize>().ok());
                let rss = report.get("rss").and_then(|v| v.parse::<f64>().ok());
                rows.push(SweepRow {
                    kappa,
                    peak_count,
                    rss,
                    error: None,
                });
            }
            Err(e) => rows.push(SweepRow {
                kappa,
                peak_count: None,
                rss: None,
                error: Some(e.to_string()),
            }),
        }
    }

    let mut text = String::from("kappa,peak_count,rss,error\n");
    for row in &rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.kappa,
            row.peak_count.map(|v| v.to_string()).unwrap_or_default(),
            row.rss.map(|v| format!("{v}")).unwrap_or_default(),
            row.error.clone().unwrap_or_default()
        ));
    }
    std::fs::create_dir_all(&config.output_dir).map_err(|source| {
        RunError::Io(IoError::Unwritable {
            path: config.output_dir.clone(),
            source,
        })
    })?;
    write_atomic(&config.output_dir.join("sweep.csv"), text.as_bytes())?;
    Ok(rows)
}
