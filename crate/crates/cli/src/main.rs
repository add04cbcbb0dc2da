//! Command-line frontend for the GT-mean loss toolkit.
//!
//! Standard output carries machine-readable payload only (JSON objects,
//! one per invocation); all diagnostics go to standard error. Exit codes
//! are a stable contract:
//!
//! 0 success, 1 usage, 2 input/parse error, 3 shape mismatch,
//! 4 output error, 5 numeric abort, 6 gradient-check failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use gtmean_core::{
    brightness_discrepancy, eta_sweep, finite_difference_check, gt_mean_loss, landscape_csv_name,
    load_ppm, psnr, ssim, synthetic_sweep_batch, train, write_landscape_csv, write_theta_txt,
    write_trace_csv, DegradationSpec, Error as CoreError, GtMeanConfig, ImageTensor, LambdaMode,
    LossKind, MetricMode, SweepSpec, TrainConfig,
};

/// Everything configurable from a file, one section per module. Missing
/// sections and fields fall back to the module defaults; unknown keys
/// are rejected with their path.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CliConfig {
    gt: GtMeanConfig,
    train: TrainConfig,
    sweep: SweepSpec,
    degradation: DegradationSpec,
}

impl CliConfig {
    fn validate(&self) -> Result<(), Failure> {
        fn in_section(name: &str, r: gtmean_core::Result<()>) -> Result<(), Failure> {
            r.map_err(|e| fail(2, format!("config `{name}`: {e}")))
        }
        in_section("gt", self.gt.validate())?;
        in_section("train", self.train.validate())?;
        in_section("sweep", self.sweep.validate())?;
        in_section("degradation", self.degradation.validate())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    L1,
    L2,
    Charbonnier,
    SmoothL1,
}

impl KindArg {
    fn to_kind(self) -> LossKind {
        match self {
            KindArg::L1 => LossKind::L1,
            KindArg::L2 => LossKind::L2,
            KindArg::Charbonnier => LossKind::charbonnier(),
            KindArg::SmoothL1 => LossKind::smooth_l1(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LambdaModeArg {
    Differentiable,
    Detached,
}

impl LambdaModeArg {
    fn to_mode(self) -> LambdaMode {
        match self {
            LambdaModeArg::Differentiable => LambdaMode::Differentiable,
            LambdaModeArg::Detached => LambdaMode::Detached,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricModeArg {
    Normal,
    Gtmean,
}

impl MetricModeArg {
    fn to_mode(self) -> MetricMode {
        match self {
            MetricModeArg::Normal => MetricMode::Normal,
            MetricModeArg::Gtmean => MetricMode::GtMean,
        }
    }
}

#[derive(Parser)]
#[command(name = "gtmean", version, about = "GT-mean loss toolkit", disable_help_subcommand = true)]
struct Cli {
    /// JSON config file; omitted sections use built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Print the fully materialized config as JSON and exit.
    #[arg(long, global = true)]
    dump_config: bool,

    #[command(subcommand)]
    command: Option<Commands>,
}

#[derive(Subcommand)]
enum Commands {
    /// Evaluate the weighted loss for one prediction/target image pair.
    LossEval {
        pred: PathBuf,
        target: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        /// Brightness-sigma coefficient override.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, value_enum)]
        lambda_mode: Option<LambdaModeArg>,
    },
    /// PSNR, SSIM and brightness discrepancy for an image pair.
    Metrics {
        pred: PathBuf,
        target: PathBuf,
        #[arg(long, value_enum, default_value = "normal")]
        mode: MetricModeArg,
    },
    /// Sweep a brightness scale over predictions and write per-sigma CSVs.
    Landscape {
        /// Prediction image; repeat for a batch (pairs with --target).
        #[arg(long)]
        pred: Vec<PathBuf>,
        /// Target image; repeat for a batch (pairs with --pred).
        #[arg(long)]
        target: Vec<PathBuf>,
        /// Use the built-in synthetic batch (8 pairs, 64x64) instead of files.
        #[arg(long)]
        synthetic: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Sigma coefficient, embedded verbatim in the CSV filename;
        /// repeat for several sweeps. Overrides the config list.
        #[arg(long)]
        sigma: Vec<String>,
        #[arg(long)]
        eta_min: Option<f64>,
        #[arg(long)]
        eta_max: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the toy trainer and write the trace CSV and final parameters.
    Train {
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, value_enum)]
        lambda_mode: Option<LambdaModeArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Evaluate at pred == target, a configuration the kink guard
        /// must reject for losses with non-smooth points.
        #[arg(long, hide = true)]
        adversarial_equal: bool,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

/// Errors while loading inputs: shape-class problems are exit 3,
/// everything else (I/O, parse, bad values) exit 2.
fn input_error(e: CoreError) -> Failure {
    match e {
        CoreError::ShapeMismatch { .. } | CoreError::ChannelMismatch { .. } => {
            fail(3, e.to_string())
        }
        _ => fail(2, e.to_string()),
    }
}

/// Errors from numeric operations on already-loaded data.
fn compute_error(e: CoreError) -> Failure {
    match e {
        CoreError::ShapeMismatch { .. }
        | CoreError::ChannelMismatch { .. }
        | CoreError::WindowTooLarge { .. } => fail(3, e.to_string()),
        CoreError::NonFiniteLoss { .. } | CoreError::NonFiniteParameters { .. } => {
            fail(5, e.to_string())
        }
        _ => fail(2, e.to_string()),
    }
}

fn output_error(e: impl std::fmt::Display) -> Failure {
    fail(4, e.to_string())
}

/// Prints the machine-readable payload line. A failed stdout write (for
/// example a closed pipe) is an output error, not a panic.
fn emit(payload: impl std::fmt::Display) -> Result<(), Failure> {
    use std::io::Write;
    writeln!(std::io::stdout(), "{payload}").map_err(output_error)
}

fn load_config(path: Option<&Path>) -> Result<CliConfig, Failure> {
    let config = match path {
        None => CliConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| fail(2, format!("config {}: {e}", p.display())))?;
            let mut de = serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(&mut de)
                .map_err(|e| fail(2, format!("config {}: {e}", p.display())))?
        }
    };
    config.validate()?;
    Ok(config)
}

fn load_image(path: &Path) -> Result<ImageTensor, Failure> {
    load_ppm(path).map_err(|e| match e {
        CoreError::Io(inner) => fail(2, format!("{}: {inner}", path.display())),
        other => input_error(other),
    })
}

fn gt_with_overrides(
    base: &GtMeanConfig,
    sigma: Option<f64>,
    lambda_mode: Option<LambdaModeArg>,
) -> GtMeanConfig {
    GtMeanConfig {
        sigma_coeff: sigma.unwrap_or(base.sigma_coeff),
        lambda_mode: lambda_mode.map_or(base.lambda_mode, LambdaModeArg::to_mode),
        mean_floor: base.mean_floor,
    }
}

fn json_f64_or_inf(v: f64) -> serde_json::Value {
    if v.is_infinite() {
        json!("inf")
    } else {
        json!(v)
    }
}

fn cmd_loss_eval(
    config: &CliConfig,
    pred: &Path,
    target: &Path,
    kind: Option<KindArg>,
    sigma: Option<f64>,
    lambda_mode: Option<LambdaModeArg>,
) -> Result<(), Failure> {
    let p = load_image(pred)?;
    let t = load_image(target)?;
    let kind = kind.map_or(LossKind::L1, KindArg::to_kind);
    let cfg = gt_with_overrides(&config.gt, sigma, lambda_mode);
    let out = gt_mean_loss(kind, &p, &t, &cfg).map_err(compute_error)?;
    let payload = json!({
        "value": out.value,
        "w": out.diag.w,
        "d_b": json_f64_or_inf(out.diag.d_b),
        "lambda": out.diag.lambda,
        "original_term": out.diag.original_term,
        "aligned_term": out.diag.aligned_term,
    });
    emit(&payload)
}

fn cmd_metrics(pred: &Path, target: &Path, mode: MetricModeArg) -> Result<(), Failure> {
    let p = load_image(pred)?;
    let t = load_image(target)?;
    let mode = mode.to_mode();
    let psnr_db = psnr(&p, &t, mode).map_err(compute_error)?;
    let ssim_val = ssim(&p, &t, mode).map_err(compute_error)?;
    let discrepancy = brightness_discrepancy(&p, &t).map_err(compute_error)?;
    let payload = json!({
        "psnr": psnr_db,
        "ssim": ssim_val,
        "brightness_discrepancy": discrepancy,
    });
    emit(&payload)
}

/// The synthetic batch matches the standard desk corpus: 8 pairs of
/// 64x64 images, seeded from the train section of the config.
const SYNTHETIC_BATCH: usize = 8;
const SYNTHETIC_SIZE: (usize, usize) = (64, 64);

#[allow(clippy::too_many_arguments)]
fn cmd_landscape(
    config: &CliConfig,
    preds: &[PathBuf],
    targets: &[PathBuf],
    synthetic: bool,
    out_dir: &Path,
    sigma_flags: &[String],
    eta_min: Option<f64>,
    eta_max: Option<f64>,
    steps: Option<usize>,
) -> Result<(), Failure> {
    let (pred_imgs, target_imgs) = if synthetic {
        if !preds.is_empty() || !targets.is_empty() {
            return Err(fail(1, "--synthetic excludes --pred/--target"));
        }
        synthetic_sweep_batch(SYNTHETIC_BATCH, SYNTHETIC_SIZE, config.train.seed)
            .map_err(compute_error)?
    } else {
        if preds.is_empty() || preds.len() != targets.len() {
            return Err(fail(
                1,
                format!(
                    "need matching --pred/--target counts (got {} and {}) or --synthetic",
                    preds.len(),
                    targets.len()
                ),
            ));
        }
        let p: Vec<ImageTensor> = preds.iter().map(|p| load_image(p)).collect::<Result<_, _>>()?;
        let t: Vec<ImageTensor> =
            targets.iter().map(|p| load_image(p)).collect::<Result<_, _>>()?;
        (p, t)
    };

    // Sigma values keep their command-line spelling for filenames;
    // config-supplied values use their shortest round-trip text.
    let sigmas: Vec<(String, f64)> = if sigma_flags.is_empty() {
        config
            .sweep
            .sigma_list
            .iter()
            .map(|&s| (format!("{s}"), s))
            .collect()
    } else {
        sigma_flags
            .iter()
            .map(|text| {
                text.parse::<f64>()
                    .map(|v| (text.clone(), v))
                    .map_err(|_| fail(1, format!("--sigma {text}: not a number")))
            })
            .collect::<Result<_, _>>()?
    };

    let spec = SweepSpec {
        eta_min: eta_min.unwrap_or(config.sweep.eta_min),
        eta_max: eta_max.unwrap_or(config.sweep.eta_max),
        steps: steps.unwrap_or(config.sweep.steps),
        sigma_list: sigmas.iter().map(|(_, v)| *v).collect(),
        kind: config.sweep.kind,
    };
    let sweeps = eta_sweep(&pred_imgs, &target_imgs, &spec, &config.gt).map_err(compute_error)?;

    std::fs::create_dir_all(out_dir).map_err(output_error)?;
    let mut minima = Vec::with_capacity(sweeps.len());
    for (sweep, (text, _)) in sweeps.iter().zip(&sigmas) {
        let path = out_dir.join(landscape_csv_name(text));
        write_landscape_csv(sweep, &path).map_err(output_error)?;
        let best = &sweep.rows[sweep.min_loss_index()];
        minima.push(json!({
            "sigma": text,
            "eta": best.eta,
            "gt_mean_loss": best.gt_mean_loss,
            "path": path.to_string_lossy(),
        }));
    }
    emit(json!(minima))
}

fn cmd_train(config: &CliConfig, out_dir: &Path) -> Result<(), Failure> {
    let trace = train(&config.train, &config.degradation).map_err(compute_error)?;
    std::fs::create_dir_all(out_dir).map_err(output_error)?;
    let trace_path = out_dir.join("train_trace.csv");
    let theta_path = out_dir.join("theta.txt");
    write_trace_csv(&trace, &trace_path).map_err(output_error)?;
    write_theta_txt(&trace.final_model, &theta_path).map_err(output_error)?;
    let last = trace.rows.last().expect("trace always has a final row");
    let payload = json!({
        "rows": trace.rows.len(),
        "final_iter": last.iter,
        "final_loss": last.loss,
        "final_w_mean": last.w_mean,
        "final_psnr": last.psnr,
        "final_gt_mean_psnr": last.gt_mean_psnr,
        "final_ssim": last.ssim,
        "final_brightness_discrepancy": last.brightness_discrepancy,
        "trace_path": trace_path.to_string_lossy(),
        "theta_path": theta_path.to_string_lossy(),
    });
    emit(&payload)
}

const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_STEP: f64 = 1e-6;

/// Smooth seeded pair for the gradient check: elementwise gaps of at
/// least 0.1 with reinforcing signs plus a small mean offset, so the
/// mixing weight is strictly between 0 and 1 and no per-element gradient
/// sits near zero.
fn gradcheck_pair(seed: u64) -> (ImageTensor, ImageTensor) {
    let (h, w) = (8, 8);
    let n = 3 * h * w;
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut pred = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    for i in 0..n {
        let base = 0.35 + 0.3 * next();
        let gap = 0.1 + 0.1 * next();
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        pred.push(base);
        target.push(base + sign * gap + 0.04);
    }
    let pred = ImageTensor::new(3, h, w, pred).expect("constructed in range");
    let target = ImageTensor::new(3, h, w, target).expect("constructed in range");
    (pred, target)
}

fn cmd_gradcheck(
    config: &CliConfig,
    kind: Option<KindArg>,
    sigma: Option<f64>,
    lambda_mode: Option<LambdaModeArg>,
    seed: u64,
    adversarial_equal: bool,
) -> Result<(), Failure> {
    let kind = kind.map_or(LossKind::L1, KindArg::to_kind);
    let cfg = gt_with_overrides(&config.gt, sigma, lambda_mode);
    let (pred, target) = gradcheck_pair(seed);
    let target = if adversarial_equal { pred.clone() } else { target };
    let rel = finite_difference_check(kind, Some(&cfg), &pred, &target, GRADCHECK_STEP)
        .map_err(|e| fail(6, e.to_string()))?;
    emit(json!({ "max_rel_error": rel }))?;
    if rel <= GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(fail(
            6,
            format!("max relative error {rel:e} exceeds {GRADCHECK_TOLERANCE:e}"),
        ))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(cli.config.as_deref())?;
    if cli.dump_config {
        let text = serde_json::to_string_pretty(&config)
            .map_err(|e| fail(2, format!("config serialization: {e}")))?;
        emit(&text)?;
        return Ok(());
    }
    match cli.command {
        None => Err(fail(1, "no command given; see --help")),
        Some(Commands::LossEval {
            pred,
            target,
            kind,
            sigma,
            lambda_mode,
        }) => cmd_loss_eval(&config, &pred, &target, kind, sigma, lambda_mode),
        Some(Commands::Metrics { pred, target, mode }) => cmd_metrics(&pred, &target, mode),
        Some(Commands::Landscape {
            pred,
            target,
            synthetic,
            out_dir,
            sigma,
            eta_min,
            eta_max,
            steps,
        }) => cmd_landscape(
            &config, &pred, &target, synthetic, &out_dir, &sigma, eta_min, eta_max, steps,
        ),
        Some(Commands::Train { out_dir }) => cmd_train(&config, &out_dir),
        Some(Commands::Gradcheck {
            kind,
            sigma,
            lambda_mode,
            seed,
            adversarial_equal,
        }) => cmd_gradcheck(&config, kind, sigma, lambda_mode, seed, adversarial_equal),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is
            // a usage error, remapped from clap's default exit 2.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
