//! Command-line front end: data ingestion, synthetic generation, method
//! recommendation, fit execution and kappa sweeps.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure,
//! 4 non-convergence (results are still written, flagged in the summary).

use clap::{Args, Parser, Subcommand};
use peakforge::deconv::WaveParams;
use peakforge::io::{emit_signal_csv, ingest_csv, write_atomic};
use peakforge::recommend::{recommend_method, Method, PeakShapeEquality};
use peakforge::runner::{kappa_sweep, run, RunConfig, RunError, Sigma2Spec};
use peakforge::synth::{
    generate_dive, generate_pulses, generate_spectrum, DiveParams, PulseParams, SpectrumParams,
};
use peakforge::unimodal::{LambdaPolicy, PenaltyKind};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_NON_CONVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "peakforge",
    about = "Unimodal spline regression and multimodal peak extraction for 1-D signals",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a method to a two-column x,y CSV and write a report bundle.
    Fit(FitArgs),
    /// Recommend a method for a described data situation.
    Recommend(RecommendArgs),
    /// Generate a synthetic signal plus ground-truth sidecar.
    Generate(GenerateArgs),
    /// Run a deconvolution once per kappa value and tabulate the results.
    SweepKappa(SweepArgs),
}

#[derive(Args, Clone)]
struct FitArgs {
    /// unireg | punireg | l0deco | blind_pointwise | blind_parametric |
    /// blind_unimodal | adduni | varying_l0deco
    #[arg(long)]
    method: Option<String>,
    /// Input CSV with x,y columns (optional header, third column ignored).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory for fitted.csv, summary.txt and plot-data files.
    #[arg(long = "output-dir")]
    output_dir: Option<PathBuf>,
    /// Inner knot count of the spline basis.
    #[arg(long)]
    q: Option<usize>,
    /// Spline degree (default 3).
    #[arg(long)]
    degree: Option<usize>,
    /// L0 tuning parameter for the deconvolution methods.
    #[arg(long)]
    kappa: Option<f64>,
    /// reml or fixed:<value>
    #[arg(long = "lambda-policy")]
    lambda_policy: Option<String>,
    /// Response threshold splitting the axis into pieces (punireg).
    #[arg(long)]
    threshold: Option<f64>,
    /// fixed:<value> | iterate:<init>:<abstol> | window:<lo>:<hi>
    /// (window bounds are 1-based inclusive row numbers)
    #[arg(long = "sigma2-policy")]
    sigma2_policy: Option<String>,
    /// Largest component count tried by adduni's AIC selection.
    #[arg(long)]
    components: Option<usize>,
    /// Seed recorded in the summary for provenance.
    #[arg(long)]
    seed: Option<u64>,
    /// ridge or d2 (second-order differences).
    #[arg(long)]
    penalty: Option<String>,
    /// Number of peak-shape samples for the deconvolution methods.
    #[arg(long)]
    ng: Option<usize>,
    /// Known or initial wave parameters as U0:xi1:xi2.
    #[arg(long = "wave-params")]
    wave_params: Option<String>,
    /// Outer iteration cap for blind deconvolution.
    #[arg(long = "max-outer")]
    max_outer: Option<usize>,
    /// Flat key=value config file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RecommendArgs {
    /// identical | diverse | unknown
    #[arg(long)]
    peaks: String,
    /// yes | no
    #[arg(long = "shape-known")]
    shape_known: String,
    /// yes | no
    #[arg(long)]
    overlap: String,
}

#[derive(Args)]
struct GenerateArgs {
    /// dive | pulses | spectrum
    #[arg(long)]
    archetype: String,
    #[arg(long = "output-dir")]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Signal length in samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Number of dives, pulses, or analyte bumps.
    #[arg(long)]
    count: Option<usize>,
    /// Noise level (standard deviation; relative for pulses).
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Ascending comma-separated kappa values, e.g. 1e-4,1e-2,1.
    #[arg(long = "kappa-grid")]
    kappa_grid: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Recommend(args) => cmd_recommend(args),
        Command::Generate(args) => cmd_generate(args),
        Command::SweepKappa(args) => cmd_sweep(args),
    };
    match code {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}

enum CliError {
    Validation(String),
    Numerical(String),
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Validation(msg) => CliError::Validation(msg),
            RunError::Numerical(msg) => CliError::Numerical(msg),
            RunError::Io(io) => CliError::Validation(io.to_string()),
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Flat key=value config file; later flags override these values.
fn load_config_file(path: &PathBuf) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(invalid(format!(
                "config line {} is not key=value: {line:?}",
                idx + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn merge_config(args: &mut FitArgs) -> Result<(), CliError> {
    let Some(path) = &args.config else {
        return Ok(());
    };
    let map = load_config_file(path)?;
    let get = |key: &str| map.get(key).cloned();
    macro_rules! fill {
        ($field:expr, $key:literal, $parse:expr) => {
            if $field.is_none() {
                if let Some(raw) = get($key) {
                    #[allow(clippy::redundant_closure_call)]
                    {
                        $field = Some($parse(raw.as_str()).ok_or_else(|| {
                            invalid(format!("config key {} has invalid value {raw:?}", $key))
                        })?);
                    }
                }
            }
        };
    }
    fill!(args.method, "method", |s: &str| Some(s.to_string()));
    fill!(args.input, "input", |s: &str| Some(PathBuf::from(s)));
    fill!(args.output_dir, "output-dir", |s: &str| Some(PathBuf::from(
        s
    )));
    fill!(args.q, "q", |s: &str| s.parse().ok());
    fill!(args.degree, "degree", |s: &str| s.parse().ok());
    fill!(args.kappa, "kappa", |s: &str| s.parse().ok());
    fill!(args.lambda_policy, "lambda-policy", |s: &str| Some(
        s.to_string()
    ));
    fill!(args.threshold, "threshold", |s: &str| s.parse().ok());
    fill!(args.sigma2_policy, "sigma2-policy", |s: &str| Some(
        s.to_string()
    ));
    fill!(args.components, "components", |s: &str| s.parse().ok());
    fill!(args.seed, "seed", |s: &str| s.parse().ok());
    fill!(args.penalty, "penalty", |s: &str| Some(s.to_string()));
    fill!(args.ng, "ng", |s: &str| s.parse().ok());
    fill!(args.wave_params, "wave-params", |s: &str| Some(s.to_string()));
    fill!(args.max_outer, "max-outer", |s: &str| s.parse().ok());
    Ok(())
}

fn parse_lambda_policy(raw: &str) -> Result<LambdaPolicy, CliError> {
    if raw == "reml" {
        return Ok(LambdaPolicy::Reml(None));
    }
    if let Some(value) = raw.strip_prefix("fixed:") {
        let v: f64 = value
            .parse()
            .map_err(|_| invalid(format!("bad lambda value {value:?}")))?;
        return Ok(LambdaPolicy::Fixed(v));
    }
    Err(invalid(format!(
        "lambda policy must be 'reml' or 'fixed:<value>', got {raw:?}"
    )))
}

fn parse_sigma2_policy(raw: &str) -> Result<Sigma2Spec, CliError> {
    let parts: Vec<&str> = raw.split(':').collect();
    match parts.as_slice() {
        ["fixed", v] => {
            let v: f64 = v.parse().map_err(|_| invalid("bad sigma2 value"))?;
            Ok(Sigma2Spec::Fixed(v))
        }
        ["iterate", init, abstol] => {
            let init: f64 = init.parse().map_err(|_| invalid("bad sigma2 init"))?;
            let abstol: f64 = abstol.parse().map_err(|_| invalid("bad sigma2 abstol"))?;
            Ok(Sigma2Spec::Iterate { init, abstol })
        }
        ["window", lo, hi] => {
            let lo: usize = lo.parse().map_err(|_| invalid("bad window lower bound"))?;
            let hi: usize = hi.parse().map_err(|_| invalid("bad window upper bound"))?;
            Ok(Sigma2Spec::Window { lo, hi })
        }
        _ => Err(invalid(format!(
            "sigma2 policy must be fixed:<v>, iterate:<init>:<abstol> or window:<lo>:<hi>, got {raw:?}"
        ))),
    }
}

fn parse_wave(raw: &str) -> Result<WaveParams, CliError> {
    let parts: Vec<&str> = raw.split(':').collect();
    let [u0, xi1, xi2] = parts.as_slice() else {
        return Err(invalid(format!(
            "wave parameters must be U0:xi1:xi2, got {raw:?}"
        )));
    };
    let parse = |s: &str| s.parse::<f64>().map_err(|_| invalid("bad wave parameter"));
    WaveParams::new(parse(u0)?, parse(xi1)?, parse(xi2)?).map_err(|e| invalid(e.to_string()))
}

fn parse_penalty(raw: &str) -> Result<PenaltyKind, CliError> {
    match raw {
        "ridge" => Ok(PenaltyKind::Ridge),
        "d2" | "second-diff" => Ok(PenaltyKind::SecondOrderDifference),
        _ => Err(invalid(format!(
            "penalty must be 'ridge' or 'd2', got {raw:?}"
        ))),
    }
}

fn build_run_config(args: &FitArgs) -> Result<(RunConfig, PathBuf), CliError> {
    let method_name = args
        .method
        .as_deref()
        .ok_or_else(|| invalid("--method is required"))?;
    let method = Method::parse(method_name)
        .ok_or_else(|| invalid(format!("unknown method {method_name:?}")))?;
    let input = args
        .input
        .clone()
        .ok_or_else(|| invalid("--input is required"))?;
    let output_dir = args
        .output_dir
        .clone()
        .ok_or_else(|| invalid("--output-dir is required"))?;

    let mut config = RunConfig::new(method, output_dir);
    config.inner_knots = args.q;
    if let Some(degree) = args.degree {
        config.degree = degree;
    }
    config.kappa = args.kappa;
    if let Some(raw) = &args.lambda_policy {
        config.lambda = parse_lambda_policy(raw)?;
    }
    config.threshold = args.threshold;
    if let Some(raw) = &args.sigma2_policy {
        config.sigma2 = parse_sigma2_policy(raw)?;
    }
    if let Some(components) = args.components {
        config.components = components;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(raw) = &args.penalty {
        config.penalty = Some(parse_penalty(raw)?);
    }
    if let Some(ng) = args.ng {
        config.shape_samples = ng;
    }
    if let Some(raw) = &args.wave_params {
        config.wave = parse_wave(raw)?;
    }
    if let Some(max_outer) = args.max_outer {
        config.max_outer = max_outer;
    }
    Ok((config, input))
}

fn cmd_fit(mut args: FitArgs) -> Result<u8, CliError> {
    merge_config(&mut args)?;
    let (config, input) = build_run_config(&args)?;
    let record = ingest_csv(&input).map_err(|e| invalid(e.to_string()))?;
    let report = run(&config, &record)?;
    for (key, value) in &report.summary {
        println!("{key}={value}");
    }
    eprintln!(
        "wrote {} file(s) to {}",
        report.files.len(),
        config.output_dir.display()
    );
    Ok(if report.converged {
        EXIT_OK
    } else {
        EXIT_NON_CONVERGENCE
    })
}

fn cmd_recommend(args: RecommendArgs) -> Result<u8, CliError> {
    let peaks = match args.peaks.as_str() {
        "identical" => PeakShapeEquality::Identical,
        "diverse" => PeakShapeEquality::Diverse,
        "unknown" => PeakShapeEquality::Unknown,
        other => {
            return Err(invalid(format!(
                "--peaks must be identical|diverse|unknown, got {other:?}"
            )))
        }
    };
    let parse_bool = |raw: &str, flag: &str| match raw {
        "yes" | "true" => Ok(true),
        "no" | "false" => Ok(false),
        other => Err(invalid(format!("--{flag} must be yes|no, got {other:?}"))),
    };
    let shape_known = parse_bool(&args.shape_known, "shape-known")?;
    let overlap = parse_bool(&args.overlap, "overlap")?;
    let rec = recommend_method(peaks, shape_known, overlap);
    println!("recommended={}", rec.primary);
    if !rec.alternatives.is_empty() {
        let names: Vec<&str> = rec.alternatives.iter().map(|m| m.cli_name()).collect();
        println!("alternatives={}", names.join(","));
    }
    println!("rationale={}", rec.rationale);
    Ok(EXIT_OK)
}

fn cmd_generate(args: GenerateArgs) -> Result<u8, CliError> {
    std::fs::create_dir_all(&args.output_dir)
        .map_err(|e| invalid(format!("cannot create {}: {e}", args.output_dir.display())))?;
    let signal_path = args.output_dir.join("signal.csv");
    let truth_path = args.output_dir.join("truth.csv");

    let truth_text = match args.archetype.as_str() {
        "dive" => {
            let mut params = DiveParams::default();
            if let Some(samples) = args.samples {
                params.samples = samples;
            }
            if let Some(count) = args.count {
                params.dives = count;
            }
            if let Some(noise) = args.noise {
                params.noise_sd = noise;
            }
            let (record, truth) =
                generate_dive(&params, args.seed).map_err(|e| invalid(e.to_string()))?;
            emit_signal_csv(&record, &signal_path).map_err(|e| invalid(e.to_string()))?;
            let mut text = String::from("start,end,max_depth,bottom_time\n");
            for t in truth {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    t.start, t.end, t.max_depth, t.bottom_time
                ));
            }
            text
        }
        "pulses" => {
            let mut params = PulseParams::default();
            if let Some(samples) = args.samples {
                params.samples = samples;
            }
            if let Some(count) = args.count {
                params.pulses = count;
            }
            if let Some(noise) = args.noise {
                params.noise_rel = noise;
            }
            let (record, truth) =
                generate_pulses(&params, args.seed).map_err(|e| invalid(e.to_string()))?;
            emit_signal_csv(&record, &signal_path).map_err(|e| invalid(e.to_string()))?;
            let mut text = String::from("arrival,height\n");
            for t in truth {
                text.push_str(&format!("{},{}\n", t.arrival, t.height));
            }
            text
        }
        "spectrum" => {
            let mut params = SpectrumParams::default();
            if let Some(samples) = args.samples {
                params.samples = samples;
            }
            if let Some(count) = args.count {
                params.bumps = count;
            }
            if let Some(noise) = args.noise {
                params.noise_sd = noise;
            }
            let (record, truth) =
                generate_spectrum(&params, args.seed).map_err(|e| invalid(e.to_string()))?;
            emit_signal_csv(&record, &signal_path).map_err(|e| invalid(e.to_string()))?;
            let mut text = String::from("center,width,height,reaction_ion\n");
            for t in truth {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    t.center, t.width, t.height, t.reaction_ion
                ));
            }
            text
        }
        other => {
            return Err(invalid(format!(
                "--archetype must be dive|pulses|spectrum, got {other:?}"
            )))
        }
    };
    write_atomic(&truth_path, truth_text.as_bytes()).map_err(|e| invalid(e.to_string()))?;
    println!("signal={}", signal_path.display());
    println!("truth={}", truth_path.display());
    Ok(EXIT_OK)
}

fn cmd_sweep(args: SweepArgs) -> Result<u8, CliError> {
    let mut fit_args = args.fit;
    merge_config(&mut fit_args)?;
    let grid_raw = args
        .kappa_grid
        .ok_or_else(|| invalid("--kappa-grid is required"))?;
    let grid: Result<Vec<f64>, _> = grid_raw
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect();
    let grid = grid.map_err(|_| invalid(format!("bad kappa grid {grid_raw:?}")))?;
    let (config, input) = build_run_config(&fit_args)?;
    let record = ingest_csv(&input).map_err(|e| invalid(e.to_string()))?;
    let rows = kappa_sweep(&config, &record, &grid)?;
    println!("kappa,peak_count,rss,error");
    for row in &rows {
        println!(
            "{},{},{},{}",
            row.kappa,
            row.peak_count.map(|v| v.to_string()).unwrap_or_default(),
            row.rss.map(|v| format!("{v}")).unwrap_or_default(),
            row.error.clone().unwrap_or_default()
        );
    }
    Ok(EXIT_OK)
}
