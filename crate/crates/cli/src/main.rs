//! `pld` — train, run and verify partially linear denoisers.
//!
//! Exit codes: 0 on success, 1 when a verification check fails, 2 for usage
//! or input errors.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pld_core::decomposition::{export_scatter, residual_stats, zlz_statistic, FitMode, McOptions};
use pld_core::io::{read_pgm, read_tensor, write_pgm, write_tensor};
use pld_core::losses::DeblurOperator;
use pld_core::model::{load_checkpoint, save_checkpoint};
use pld_core::noise::NoiseSpec;
use pld_core::rng::{stream_label, SeededRng};
use pld_core::suites;
use pld_core::trainer::{train_deblur, train_denoiser, EvalSet, TrainConfig, TrainMode};
use pld_core::variance::{fit_linear, merge_curves, multiframe_variance, variance_curve_for, FrameStack};
use pld_core::{Real, TensorImage};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pld", version, about = "Partially linear denoisers: training, inference, diagnostics and verification")]
struct Cli {
    /// Worker threads; 1 (the default) is bit-reproducible, and results are
    /// identical for any value because work is reduced in a fixed order.
    /// Falls back to the PLD_THREADS environment variable.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser (unsupervised or supervised baseline) from a config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Restore an image with a trained model.
    Denoise {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a deblurring model; the forward kernel is a rank-2 PLDT tensor.
    DeblurTrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        kernel: PathBuf,
    },
    /// Deblur an image with a trained model (no kernel needed at inference).
    Deblur {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo decomposition of a trained model at a clean image.
    Decompose {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        /// Noise spec as inline JSON, e.g. '{"kind":"gaussian","sigma":0.098}'.
        #[arg(long)]
        noise: String,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0.5)]
        alpha: Real,
        #[arg(long, value_enum, default_value_t = FitModeArg::Diagonal)]
        mode: FitModeArg,
        /// Flat pixel index for the scatter export; defaults to the center.
        #[arg(long)]
        pixel: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Estimate noise variance from noisy images alone.
    EstimateNoise {
        /// An image file or a directory of .pgm/.pldt images.
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory of frames for the multi-frame estimator.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// CSV output for the intensity-binned variance curve.
        #[arg(long)]
        out_curve: Option<PathBuf>,
        /// PLDT output for the per-pixel variance map (multi-frame mode).
        #[arg(long)]
        out_var: Option<PathBuf>,
    },
    /// Run a verification suite; exits 1 if any check fails.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte-Carlo sample count override (per check).
        #[arg(long)]
        samples: Option<usize>,
        /// Write the combined JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for scatter CSV exports (example1 suite).
        #[arg(long)]
        scatter_dir: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum FitModeArg {
    Full,
    Diagonal,
}

impl From<FitModeArg> for FitMode {
    fn from(v: FitModeArg) -> FitMode {
        match v {
            FitModeArg::Full => FitMode::Full,
            FitModeArg::Diagonal => FitMode::Diagonal,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum Suite {
    Prop1,
    Prop2,
    Corollary,
    Example1,
    Gradients,
    All,
}

/// Run configuration: the training hyperparameters plus data paths. Unknown
/// keys are rejected.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    train: TrainConfig,
    corpus_dir: PathBuf,
    out_dir: PathBuf,
    #[serde(default)]
    eval_clean_dir: Option<PathBuf>,
    #[serde(default)]
    eval_noisy_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: &'a TrainConfig,
    corpus_images: usize,
    aborted_at: Option<usize>,
    final_loss: Option<Real>,
    final_psnr: Option<Real>,
    final_ssim: Option<Real>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("PLD_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(1)
    .max(1)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let threads = resolve_threads(cli.threads);
    match cli.command {
        Command::Train { config } => cmd_train(&config, threads, None),
        Command::DeblurTrain { config, kernel } => cmd_train(&config, threads, Some(&kernel)),
        Command::Denoise { model, input, out } | Command::Deblur { model, input, out } => {
            cmd_restore(&model, &input, &out)
        }
        Command::Decompose {
            model,
            clean,
            noise,
            samples,
            alpha,
            mode,
            pixel,
            seed,
            out_dir,
        } => cmd_decompose(
            &model, &clean, &noise, samples, alpha, mode.into(), pixel, seed, &out_dir, threads,
        ),
        Command::EstimateNoise {
            input,
            frames,
            out_curve,
            out_var,
        } => cmd_estimate_noise(&input, frames.as_deref(), out_curve.as_deref(), out_var.as_deref()),
        Command::Verify {
            suite,
            seed,
            samples,
            out,
            scatter_dir,
        } => cmd_verify(suite, seed, samples, out.as_deref(), scatter_dir.as_deref(), threads),
    }
}

fn load_image(path: &Path) -> Result<TensorImage> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => Ok(read_pgm(path)?),
        Some("pldt") => Ok(read_tensor(path)?),
        other => bail!("unsupported image extension {other:?} (expected .pgm or .pldt)"),
    }
}

fn save_image(path: &Path, t: &TensorImage) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => Ok(write_pgm(path, t)?),
        Some("pldt") => Ok(write_tensor(path, t)?),
        other => bail!("unsupported image extension {other:?} (expected .pgm or .pldt)"),
    }
}

/// Loads every .pgm/.pldt in a directory in name order, or a single file.
fn load_images(path: &Path) -> Result<Vec<TensorImage>> {
    if path.is_file() {
        return Ok(vec![load_image(path)?]);
    }
    let mut names: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm") | Some("pldt")
            )
        })
        .collect();
    names.sort();
    if names.is_empty() {
        bail!("no .pgm or .pldt images in {}", path.display());
    }
    names.iter().map(|p| load_image(p)).collect()
}

fn cmd_train(config_path: &Path, threads: usize, kernel: Option<&Path>) -> Result<ExitCode> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let mut run_config: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", config_path.display()))?;
    run_config.train.threads = threads;
    run_config.train.validate().map_err(|e| anyhow!("{e}"))?;

    let corpus = load_images(&run_config.corpus_dir)?;
    let eval = match (&run_config.eval_clean_dir, &run_config.eval_noisy_dir) {
        (Some(c), Some(n)) => Some(EvalSet::new(load_images(c)?, load_images(n)?)?),
        (None, None) => None,
        _ => bail!("eval_clean_dir and eval_noisy_dir must be given together"),
    };

    let (model, history) = match (run_config.train.mode, kernel) {
        (TrainMode::Deblur, Some(kpath)) => {
            let kernel_tensor = read_tensor(kpath)?;
            let op = DeblurOperator::new(kernel_tensor)?;
            train_deblur(&run_config.train, &corpus, &op, eval.as_ref())?
        }
        (TrainMode::Deblur, None) => bail!("deblur mode requires --kernel (use deblur-train)"),
        (_, Some(_)) => bail!("--kernel is only valid in deblur mode"),
        (_, None) => train_denoiser(&run_config.train, &corpus, eval.as_ref())?,
    };

    std::fs::create_dir_all(&run_config.out_dir)?;
    save_checkpoint(
        run_config.out_dir.join("checkpoint"),
        &model,
        run_config.train.total_steps(),
        run_config.train.seed,
    )?;
    history.write_csv(run_config.out_dir.join("history.csv"))?;
    let last = history.rows.last();
    let report = TrainReport {
        config: &run_config.train,
        corpus_images: corpus.len(),
        aborted_at: history.aborted_at,
        final_loss: last.map(|r| r.loss),
        final_psnr: last.and_then(|r| r.psnr),
        final_ssim: last.and_then(|r| r.ssim),
    };
    std::fs::write(
        run_config.out_dir.join("run_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "trained {} steps; checkpoint at {}",
        run_config.train.total_steps(),
        run_config.out_dir.join("checkpoint").display()
    );
    if history.aborted_at.is_some() {
        bail!("training aborted on a non-finite loss; last good checkpoint saved");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_restore(model_dir: &Path, input: &Path, out: &Path) -> Result<ExitCode> {
    let (model, _, _) = load_checkpoint::<Real>(model_dir)?;
    let image = load_image(input)?;
    let restored = model.forward(&image).map_err(|e| anyhow!("{e}"))?;
    save_image(out, &restored)?;
    println!("restored {} -> {}", input.display(), out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct DecomposeCliReport {
    seed: u64,
    alpha: Real,
    samples: usize,
    noise: NoiseSpec,
    eps2_per_pixel: Real,
    output_variance_per_pixel: Real,
    zlz_statistic: Real,
    zlz_se: Real,
    scatter_pixel: usize,
    scatter_pearson: Real,
}

#[allow(clippy::too_many_arguments)]
fn cmd_decompose(
    model_dir: &Path,
    clean: &Path,
    noise_json: &str,
    samples: usize,
    alpha: Real,
    mode: FitMode,
    pixel: Option<usize>,
    seed: u64,
    out_dir: &Path,
    threads: usize,
) -> Result<ExitCode> {
    let spec: NoiseSpec = serde_json::from_str(noise_json).context("parsing --noise JSON")?;
    spec.validate().map_err(|e| anyhow!("{e}"))?;
    let (model, _, _) = load_checkpoint::<Real>(model_dir)?;
    let x = load_image(clean)?;
    let pixel = pixel.unwrap_or(x.len() / 2);

    let opts = McOptions {
        samples,
        alpha,
        mode,
        threads,
        ..Default::default()
    };
    let rng = SeededRng::with_stream(seed, stream_label("cli.decompose"));
    let dec = residual_stats(&model, &x, &spec, &opts, &rng)?;
    let zlz = zlz_statistic(&model, &x, &spec, alpha, samples, &rng.substream(1), threads)?;
    let scatter = export_scatter(&model, &x, pixel, &spec, &opts, &rng)?;

    std::fs::create_dir_all(out_dir)?;
    scatter.write_csv(out_dir.join("scatter.csv"))?;
    let report = DecomposeCliReport {
        seed,
        alpha,
        samples,
        noise: spec,
        eps2_per_pixel: dec.eps2_per_pixel,
        output_variance_per_pixel: dec.output_variance_per_pixel,
        zlz_statistic: zlz.statistic,
        zlz_se: zlz.se,
        scatter_pixel: pixel,
        scatter_pearson: scatter.pearson(),
    };
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(out_dir.join("decomposition.json"), &json)?;
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct NoiseEstimateReport {
    images: usize,
    bins: usize,
    fit_mu: Option<Real>,
    fit_lambda: Option<Real>,
    fit_slope: Option<Real>,
    fit_intercept: Option<Real>,
    weighted_mean_variance: Real,
}

fn cmd_estimate_noise(
    input: &Path,
    frames: Option<&Path>,
    out_curve: Option<&Path>,
    out_var: Option<&Path>,
) -> Result<ExitCode> {
    if let Some(frames_dir) = frames {
        let stack = FrameStack::new(load_images(frames_dir)?)?;
        let var = multiframe_variance(&stack)?;
        let out = out_var
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("variance_map.pldt"));
        write_tensor(&out, &var)?;
        println!(
            "multi-frame variance over {} frames -> {} (mean {:.6e})",
            stack.n_frames(),
            out.display(),
            var.mean()
        );
        return Ok(ExitCode::SUCCESS);
    }

    let images = load_images(input)?;
    let curves = images
        .iter()
        .map(variance_curve_for)
        .collect::<pld_core::Result<Vec<_>>>()?;
    let mut curve = merge_curves(&curves)?;
    let fit = fit_linear(&mut curve);
    if let Err(e) = &fit {
        log::warn!("linear fit unavailable: {e}");
    }
    let out = out_curve
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("variance_curve.csv"));
    curve.write_csv(&out)?;
    let report = NoiseEstimateReport {
        images: images.len(),
        bins: curve.bins.len(),
        fit_mu: curve.fit_mu,
        fit_lambda: curve.fit_lambda,
        fit_slope: curve.fit_slope,
        fit_intercept: curve.fit_intercept,
        weighted_mean_variance: curve.weighted_mean_variance(),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(
    suite: Suite,
    seed: u64,
    samples: Option<usize>,
    out: Option<&Path>,
    scatter_dir: Option<&Path>,
    threads: usize,
) -> Result<ExitCode> {
    let mut reports = Vec::new();
    let run_prop1 = matches!(suite, Suite::Prop1 | Suite::All);
    let run_prop2 = matches!(suite, Suite::Prop2 | Suite::All);
    let run_corollary = matches!(suite, Suite::Corollary | Suite::All);
    let run_example1 = matches!(suite, Suite::Example1 | Suite::All);
    let run_gradients = matches!(suite, Suite::Gradients | Suite::All);

    if run_gradients {
        reports.push(suites::gradients_suite(seed, 5, threads)?);
    }
    if run_prop1 {
        reports.push(suites::prop1_suite(seed, 20, samples.unwrap_or(100_000), threads)?);
        reports.push(suites::remark2_suite(seed, samples.unwrap_or(100_000), threads)?);
    }
    if run_prop2 {
        reports.push(suites::prop2_suite(seed, samples.unwrap_or(40_000), threads)?);
    }
    if run_corollary {
        reports.push(suites::corollary_suite(seed, samples.unwrap_or(100_000))?);
    }
    if run_example1 {
        let (report, _) =
            suites::example1_suite(seed, samples.unwrap_or(2500), scatter_dir, threads)?;
        reports.push(report);
    }

    let mut all_pass = true;
    for r in &reports {
        for line in r.summary_lines() {
            println!("{line}");
        }
        all_pass &= r.pass;
    }
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&reports)?)?;
    }
    println!(
        "verify: {} ({} suites, seed {seed})",
        if all_pass { "ALL CHECKS PASSED" } else { "CHECK FAILURES" },
        reports.len()
    );
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
