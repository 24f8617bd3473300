//! Acceptance suite: every release gate as one test per criterion, each
//! printing a PASS/FAIL line. Run with
//! `cargo test -p pld-core --test acceptance -- --nocapture`.

use pld_core::decomposition::{residual_stats, zlz_statistic, FitMode, McOptions, ReluDenoiser, ScalarGainDenoiser};
use pld_core::losses::{build_perturbation, plc_penalty, sigma_max_for, DeblurOperator};
use pld_core::model::{DenoiserModel, ModelConfig};
use pld_core::noise::NoiseSpec;
use pld_core::rng::{gaussian_samples, SeededRng};
use pld_core::suites;
use pld_core::tensor::Tensor;
use pld_core::trainer::{
    corrupt_corpus, synthetic_corpus, train_deblur, train_denoiser, EvalSet, TrainConfig,
    TrainMode,
};
use pld_core::variance::{
    fit_linear, multiframe_variance, variance_curve_for, FrameStack,
};
use pld_core::verification::RectifierOracle;
use pld_core::{Real, TensorImage};
use serde::Serialize;
use std::sync::OnceLock;

const THREADS: usize = 2;

fn pass_line(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

// ---------------------------------------------------------------- criterion 1

static CRIT1_REPORT: OnceLock<String> = OnceLock::new();

fn run_criterion1() -> String {
    let report = suites::prop1_suite(11, 20, 100_000, THREADS).expect("prop1 suite");
    report.to_json().expect("serialize")
}

#[test]
fn criterion_01_prop1_equivalence() {
    let json = CRIT1_REPORT.get_or_init(run_criterion1);
    let report: serde_json::Value = serde_json::from_str(json).unwrap();
    let pass = report["pass"].as_bool().unwrap();
    let n = report["checks"].as_array().unwrap().len();
    pass_line(
        "1 (loss-MSE equivalence for linear denoisers)",
        pass,
        &format!("{n} cases, |J - MSE - c| within 4 combined SE each"),
    );
    assert!(pass, "some prop1 case exceeded 4 SE:\n{json}");
    assert_eq!(n, 40, "expected 20 denoisers x 2 alphas");
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_02_remark2_extra_term() {
    let report = suites::remark2_suite(12, 100_000, THREADS).unwrap();
    pass_line(
        "2 (mis-specified variance trace term)",
        report.pass,
        &format!(
            "beta = ±0.2 discrepancies match 2 beta tr(L Cov z) within 4 SE ({} checks)",
            report.checks.len()
        ),
    );
    assert!(report.pass, "{:#?}", report.checks);
}

// ---------------------------------------------------------------- criterion 3

static CRIT3_REPORT: OnceLock<String> = OnceLock::new();

fn run_criterion3() -> String {
    let report = suites::gradients_suite(13, 5, 1).expect("gradient suite");
    report.to_json().expect("serialize")
}

#[test]
fn criterion_03_gradient_oracle() {
    let json = CRIT3_REPORT.get_or_init(run_criterion3);
    let report: serde_json::Value = serde_json::from_str(json).unwrap();
    let pass = report["pass"].as_bool().unwrap();
    pass_line(
        "3 (finite-difference gradient oracle)",
        pass,
        "empirical, penalty, deblur and proxy losses at rel error <= 1e-4, 5 seeds",
    );
    assert!(pass, "{json}");
}

// ---------------------------------------------------------------- criterion 4

/// A model whose rectifiers are saturated on the whole working domain, so
/// its forward map is exactly affine there. Weights are bounded uniforms
/// and the hidden biases dominate the worst-case convolution sums: with
/// inputs in [-1.5, 1.5], layer one stays within 1 ± 9*0.03*1.5 and layer
/// two within 2 ± 36*0.03*1.5 — strictly positive either way.
fn affine_saturated_model(rng: &mut SeededRng) -> DenoiserModel<Real> {
    let config = ModelConfig {
        depth: 3,
        width: 4,
        kernel: 3,
        residual_skip: false,
        in_channels: 1,
    };
    let mut model = DenoiserModel::init(&config, rng).unwrap();
    let mut params = model.parameters();
    for (i, p) in params.iter_mut().enumerate() {
        let is_bias = i % 2 == 1;
        let layer = i / 2;
        if is_bias {
            let b = match layer {
                0 => 1.0,
                1 => 2.0,
                _ => 0.0,
            };
            *p = Tensor::full(p.shape(), b);
        } else {
            *p = Tensor::from_fn(p.shape(), |_| rng.uniform_in(-0.03, 0.03));
        }
    }
    model.set_parameters(&params).unwrap();
    model
}

#[test]
fn criterion_04_penalty_exactness() {
    let spec = NoiseSpec::gaussian(0.15);
    let mut rng = SeededRng::new(14);
    let mut worst_penalty: Real = 0.0;
    let mut clipped_pairs = 0usize;
    for trial in 0..100 {
        let model = affine_saturated_model(&mut rng);
        let y: TensorImage = gaussian_samples(&mut rng, &[1, 12, 12], 0.5, 0.12).unwrap();
        let sample = pld_core::noise::corrupt_observation(&y, &spec, 1.0, &mut rng).unwrap();
        let sigma_max = sigma_max_for(&spec, &[&sample.y]).unwrap();
        let pair = build_perturbation(&sample.y_hat, &spec, &sample.y, sigma_max, &mut rng).unwrap();
        // convex identity holds bitwise after clipping
        let recombined = pair
            .q1
            .zip_with(&pair.q2, |a, b| pair.tau1 * a + pair.tau2() * b)
            .unwrap();
        assert_eq!(
            recombined.data(),
            pair.y_hat.data(),
            "trial {trial}: convex identity broke"
        );
        if pair
            .q
            .data()
            .iter()
            .zip(pair.mask_m.data())
            .any(|(q, m)| *q != 0.0 && *m > 0.0)
        {
            clipped_pairs += 1;
        }
        let pen = plc_penalty(&model, &pair).unwrap();
        worst_penalty = worst_penalty.max(pen);
    }
    let pass = worst_penalty <= 1e-12;
    pass_line(
        "4 (penalty exactness for affine models)",
        pass,
        &format!("worst penalty {worst_penalty:.3e} over 100 pairs ({clipped_pairs} with active perturbations)"),
    );
    assert!(pass, "worst penalty {worst_penalty}");
    assert!(clipped_pairs > 90, "perturbations were mostly degenerate");
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_05_decomposition_sanity() {
    // linear gain: full fit recovers 0.7 I with elementwise error <= 1e-2
    // and per-pixel residual <= 1e-8, at N = 10 m
    let x = Tensor::from_fn(&[1, 8, 8], |i| 0.3 + 0.004 * i as Real);
    let spec = NoiseSpec::gaussian(0.1);
    let opts = McOptions {
        samples: 640,
        alpha: 0.5,
        mode: FitMode::Full,
        threads: THREADS,
        ..Default::default()
    };
    let rng = SeededRng::new(15);
    let dec = residual_stats(&ScalarGainDenoiser(0.7), &x, &spec, &opts, &rng).unwrap();
    let mut max_err: Real = 0.0;
    match &dec.linear {
        pld_core::decomposition::LinearMap::Full(l) => {
            for i in 0..64 {
                for j in 0..64 {
                    let want = if i == j { 0.7 } else { 0.0 };
                    max_err = max_err.max((l[(i, j)] - want).abs());
                }
            }
        }
        _ => panic!("expected full map"),
    }
    let linear_ok = max_err <= 1e-2 && dec.eps2_per_pixel <= 1e-8;

    // rectifier: Monte-Carlo residual variance matches 1-D quadrature
    let sigma: Real = 0.1;
    let alpha: Real = 0.5;
    let x0 = Tensor::zeros(&[1, 8, 8]);
    let opts = McOptions {
        samples: 40_000,
        alpha,
        mode: FitMode::Diagonal,
        threads: THREADS,
        ..Default::default()
    };
    let rng = SeededRng::new(16);
    let dec_r = residual_stats(&ReluDenoiser, &x0, &NoiseSpec::gaussian(sigma), &opts, &rng).unwrap();
    let oracle = RectifierOracle::new(sigma * (1.0 + alpha * alpha).sqrt()).unwrap();
    let eps2_quad = oracle.residual_variance();
    let rel = (dec_r.eps2_per_pixel - eps2_quad).abs() / eps2_quad;
    let relu_ok = rel <= 0.05;

    let pass = linear_ok && relu_ok;
    pass_line(
        "5 (decomposition sanity)",
        pass,
        &format!(
            "0.7I fit: max err {max_err:.2e}, eps2 {:.2e}; rectifier eps2 within {:.2}% of quadrature",
            dec.eps2_per_pixel,
            rel * 100.0
        ),
    );
    assert!(linear_ok, "max_err {max_err}, eps2 {}", dec.eps2_per_pixel);
    assert!(relu_ok, "relative error {rel}");
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_06_example1_constant_patches() {
    let dir = tempfile::tempdir().unwrap();
    let (report, details) = suites::example1_suite(17, 2500, Some(dir.path()), THREADS).unwrap();
    for d in &details {
        assert!(
            d.scatter_csv.is_some(),
            "scatter CSV missing for lambda {}",
            d.lambda
        );
        let path = d.scatter_csv.as_ref().unwrap();
        let body = std::fs::read_to_string(path).unwrap();
        assert!(body.lines().count() > 1000, "scatter too small: {path}");
    }
    pass_line(
        "6 (constant-patch posterior oracle)",
        report.pass,
        &format!(
            "residual at least 10x below output variance for lambda 1, 2, 4 (ratios {:?})",
            details.iter().map(|d| d.ratio).collect::<Vec<_>>()
        ),
    );
    assert!(report.pass, "{:#?}", report.checks);
}

// ---------------------------------------------------------------- criterion 7

#[derive(Serialize)]
struct TrainingCriterionReport {
    seed: u64,
    noisy_psnr: Real,
    trained_psnr: Real,
    supervised_psnr: Real,
    trained_final_loss: Real,
    history_csv: String,
}

struct TrainingArtifacts {
    report_json: String,
    checkpoint_bytes: Vec<u8>,
}

fn params_to_bytes(model: &DenoiserModel<Real>) -> Vec<u8> {
    let mut out = Vec::new();
    for p in model.parameters() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn criterion7_config(noise: NoiseSpec, gamma: Real, threads: usize) -> TrainConfig {
    let mut config = TrainConfig::desk_defaults(noise, TrainMode::Denoise, 1007);
    // stage-two restart is warm: desk-scale batches cannot absorb a full
    // 1e-3 restart under the alpha-inflated target variance
    config.lr_schedule = vec![
        (0, 1e-3),
        (600, 1e-4),
        (1200, 5e-5),
        (2000, 3e-4),
        (2600, 1e-4),
        (3200, 5e-5),
    ];
    config.batch_size = 24;
    config.gamma = gamma;
    config.threads = threads;
    config.eval_interval = 1000;
    config
}

fn run_training_criterion(noise: NoiseSpec, gamma: Real, threads: usize) -> TrainingArtifacts {
    let config = criterion7_config(noise.clone(), gamma, threads);

    let mut data_rng = SeededRng::new(900 + config.seed);
    let clean = synthetic_corpus(200, (32, 32), &mut data_rng);
    let noisy = corrupt_corpus(&clean, &noise, &mut data_rng).unwrap();
    let eval_clean = synthetic_corpus(20, (32, 32), &mut data_rng);
    let eval_noisy = corrupt_corpus(&eval_clean, &noise, &mut data_rng).unwrap();
    let eval = EvalSet::new(eval_clean, eval_noisy).unwrap();

    let (trained, history) = train_denoiser(&config, &noisy, Some(&eval)).unwrap();
    let (trained_psnr, _) = eval.evaluate(&trained).unwrap();

    let mut sup_config = config.clone();
    sup_config.mode = TrainMode::SupervisedBaseline;
    let (sup, _) = train_denoiser(&sup_config, &clean, Some(&eval)).unwrap();
    let (sup_psnr, _) = eval.evaluate(&sup).unwrap();

    let mut history_csv = String::from("step,loss,psnr,ssim\n");
    for r in &history.rows {
        history_csv.push_str(&format!(
            "{},{},{},{}\n",
            r.step,
            r.loss,
            r.psnr.unwrap_or(Real::NAN),
            r.ssim.unwrap_or(Real::NAN)
        ));
    }
    let report = TrainingCriterionReport {
        seed: config.seed,
        noisy_psnr: eval.noisy_psnr().unwrap(),
        trained_psnr,
        supervised_psnr: sup_psnr,
        trained_final_loss: history.rows.last().unwrap().loss,
        history_csv,
    };
    TrainingArtifacts {
        report_json: serde_json::to_string_pretty(&report).unwrap(),
        checkpoint_bytes: params_to_bytes(&trained),
    }
}

static CRIT7_ARTIFACTS: OnceLock<TrainingArtifacts> = OnceLock::new();

fn crit7() -> &'static TrainingArtifacts {
    CRIT7_ARTIFACTS
        .get_or_init(|| run_training_criterion(NoiseSpec::gaussian(25.0 / 255.0), 4.0, THREADS))
}

#[test]
fn criterion_07_desk_scale_unsupervised_gaussian() {
    let artifacts = crit7();
    let report: serde_json::Value = serde_json::from_str(&artifacts.report_json).unwrap();
    let noisy = report["noisy_psnr"].as_f64().unwrap();
    let trained = report["trained_psnr"].as_f64().unwrap();
    let sup = report["supervised_psnr"].as_f64().unwrap();
    let margin_ok = trained >= noisy + 3.0;
    let gap_ok = trained >= sup - 1.5;
    pass_line(
        "7 (desk-scale unsupervised training, Gaussian)",
        margin_ok && gap_ok,
        &format!("noisy {noisy:.2} dB, trained {trained:.2} dB, supervised {sup:.2} dB"),
    );
    assert!(margin_ok, "trained {trained:.2} vs noisy {noisy:.2}");
    assert!(gap_ok, "trained {trained:.2} vs supervised {sup:.2}");
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_08_desk_scale_unsupervised_poisson() {
    let artifacts = run_training_criterion(NoiseSpec::poisson(30.0), 16.0, THREADS);
    let report: serde_json::Value = serde_json::from_str(&artifacts.report_json).unwrap();
    let noisy = report["noisy_psnr"].as_f64().unwrap();
    let trained = report["trained_psnr"].as_f64().unwrap();
    let sup = report["supervised_psnr"].as_f64().unwrap();
    let margin_ok = trained >= noisy + 3.0;
    let gap_ok = trained >= sup - 1.5;
    pass_line(
        "8 (desk-scale unsupervised training, Poisson lambda 30, gamma 16)",
        margin_ok && gap_ok,
        &format!("noisy {noisy:.2} dB, trained {trained:.2} dB, supervised {sup:.2} dB"),
    );
    assert!(margin_ok, "trained {trained:.2} vs noisy {noisy:.2}");
    assert!(gap_ok, "trained {trained:.2} vs supervised {sup:.2}");
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_09_corollary_bound() {
    let report = suites::corollary_suite(19, 100_000).unwrap();
    let check = &report.checks[0];
    let delta = check.components["delta_hat"];
    let slack = check.tolerance - check.statistic;
    let pass = report.pass && delta <= 1e-4 && slack > 0.0;
    pass_line(
        "9 (delta-distribution corollary, scalar-gain family)",
        pass,
        &format!(
            "delta_hat {delta:.2e}, lhs {:.3e} <= rhs {:.3e}, slack {slack:.3e}",
            check.statistic, check.tolerance
        ),
    );
    assert!(pass, "{check:#?}");
}

// --------------------------------------------------------------- criterion 10

#[test]
fn criterion_10_noise_variance_estimation() {
    // (a) Gaussian bands: pipeline estimate within 10% of sigma^2
    let sigma: Real = 0.04;
    let h = 256usize;
    let mut rng = SeededRng::new(20);
    let clean = Tensor::from_fn(&[1, h, h], |i| {
        let band = (i / h) * 4 / h;
        0.2 + 0.18 * band as Real
    });
    let noise: TensorImage = gaussian_samples(&mut rng, &[1, h, h], 0.0, sigma).unwrap();
    let y = clean.add(&noise).unwrap();
    let curve = variance_curve_for(&y).unwrap();
    let est = curve.weighted_mean_variance();
    let gauss_rel = (est - sigma * sigma).abs() / (sigma * sigma);
    let gauss_ok = gauss_rel <= 0.10;

    // (b) multi-frame with n = 10 recovers n sigma^2 within 3% over 1e5 px
    let n = 10usize;
    let fsigma: Real = 0.05;
    let frames: Vec<TensorImage> = (0..n)
        .map(|_| gaussian_samples(&mut rng, &[1, 320, 320], 0.5, fsigma).unwrap())
        .collect();
    let v = multiframe_variance(&FrameStack::new(frames).unwrap()).unwrap();
    let want = n as Real * fsigma * fsigma;
    let mf_rel = (v.mean() - want).abs() / want;
    let mf_ok = mf_rel <= 0.03;

    // (c) Poisson images: fitted lambda within 10%. The smooth-region
    // threshold admits pixels only where var(v) < 0.02 (v - v_min), i.e.
    // lambda above ~50, which is the regime of the estimator's real use.
    let lambda: Real = 70.0;
    let spec = NoiseSpec::poisson(lambda);
    let clean_p = Tensor::from_fn(&[1, h, h], |i| {
        let band = (i / h) * 6 / h;
        0.02 + 0.11 * band as Real
    });
    let yp = clean_p
        .add(&pld_core::noise::sample_noise(&spec, &clean_p, &mut rng).unwrap())
        .unwrap();
    let mut curve_p = variance_curve_for(&yp).unwrap();
    let (_, fitted_lambda) = fit_linear(&mut curve_p).unwrap();
    let poisson_rel = (fitted_lambda - lambda).abs() / lambda;
    let poisson_ok = poisson_rel <= 0.10;

    let pass = gauss_ok && mf_ok && poisson_ok;
    pass_line(
        "10 (noise-variance estimation)",
        pass,
        &format!(
            "gaussian {:.1}%, multiframe {:.1}%, poisson lambda {:.1}% (fitted {fitted_lambda:.1})",
            gauss_rel * 100.0,
            mf_rel * 100.0,
            poisson_rel * 100.0
        ),
    );
    assert!(gauss_ok, "gaussian rel {gauss_rel}");
    assert!(mf_ok, "multiframe rel {mf_rel}");
    assert!(poisson_ok, "poisson rel {poisson_rel} (fitted {fitted_lambda})");
}

// --------------------------------------------------------------- criterion 11

#[test]
fn criterion_11_zlz_trend_soft_check() {
    let sigma: Real = 25.0 / 255.0;
    let betas = [-0.16, 0.0, 0.16];
    let mut monotone_runs = 0usize;
    let mut all_stats = Vec::new();
    for seed in 0..5u64 {
        let mut stats = Vec::new();
        for &beta in &betas {
            let train_spec = NoiseSpec::gaussian(sigma).with_env_scale(1.0 + beta);
            let mut config = TrainConfig::desk_defaults(train_spec, TrainMode::Denoise, 3000 + seed);
            config.stage1_steps = 300;
            config.stage2_steps = 300;
            config.lr_schedule = vec![(0, 1e-3), (360, 1e-4), (600, 3e-4), (780, 1e-4)];
            config.batch_size = 8;
            config.patch_size = (16, 16);
            config.model = ModelConfig {
                depth: 3,
                width: 8,
                kernel: 3,
                residual_skip: true,
                in_channels: 1,
            };
            config.threads = THREADS;
            config.eval_interval = 10_000;
            let mut rng = SeededRng::new(7000 + seed);
            let clean = synthetic_corpus(50, (24, 24), &mut rng);
            let noisy = corrupt_corpus(&clean, &NoiseSpec::gaussian(sigma), &mut rng).unwrap();
            let (model, _) = train_denoiser(&config, &noisy, None).unwrap();

            // evaluate with both n and z drawn from the estimated variance
            let eval_spec = NoiseSpec::gaussian(sigma * (1.0 + beta).sqrt());
            let x_const = Tensor::full(&[1, 40, 40], 0.5);
            let zrng = SeededRng::new(8000 + seed);
            let rep =
                zlz_statistic(&model, &x_const, &eval_spec, 0.0, 1500, &zrng, THREADS).unwrap();
            stats.push(rep.statistic);
        }
        let monotone = stats[0] > stats[1] && stats[1] > stats[2];
        if monotone {
            monotone_runs += 1;
        }
        all_stats.push(stats);
    }
    let pass = monotone_runs >= 4;
    pass_line(
        "11 (z-Lz trend under variance misestimation, soft)",
        pass,
        &format!("monotone decreasing in beta for {monotone_runs}/5 seeds; stats {all_stats:?}"),
    );
    if !pass {
        // soft check per the acceptance contract: warn, do not fail
        eprintln!(
            "criterion 11 WARNING: trend held in only {monotone_runs}/5 runs; stats {all_stats:?}"
        );
    }
}

// --------------------------------------------------------------- criterion 12

#[test]
fn criterion_12_desk_scale_deblurring() {
    let sigma: Real = 2.0 / 255.0;
    let noise = NoiseSpec::gaussian(sigma);
    let op = DeblurOperator::box_blur(3).unwrap();

    let mut config = TrainConfig::desk_defaults(noise.clone(), TrainMode::Deblur, 1012);
    config.stage1_steps = 1200;
    config.stage2_steps = 1200;
    config.lr_schedule = vec![
        (0, 1e-3),
        (360, 1e-4),
        (720, 5e-5),
        (1200, 3e-4),
        (1560, 1e-4),
        (1920, 5e-5),
    ];
    config.batch_size = 16;
    config.patch_size = (24, 24);
    config.alpha_stage2 = (0.1, 0.2);
    config.gamma = 1.0 / 16.0;
    config.gamma_prox = 1.0 / 16.0;
    config.threads = THREADS;
    config.eval_interval = 600;

    let mut rng = SeededRng::new(901);
    let clean = synthetic_corpus(200, (32, 32), &mut rng);
    let blurry: Vec<TensorImage> = clean
        .iter()
        .map(|x| {
            let b = op.apply(x).unwrap();
            let n = pld_core::noise::sample_noise(&noise, x, &mut rng).unwrap();
            b.add(&n).unwrap()
        })
        .collect();
    let eval_clean = synthetic_corpus(20, (32, 32), &mut rng);
    let eval_blurry: Vec<TensorImage> = eval_clean
        .iter()
        .map(|x| {
            let b = op.apply(x).unwrap();
            let n = pld_core::noise::sample_noise(&noise, x, &mut rng).unwrap();
            b.add(&n).unwrap()
        })
        .collect();
    let eval = EvalSet::new(eval_clean, eval_blurry).unwrap();

    let blurry_psnr = eval.noisy_psnr().unwrap();
    let (model, history) = train_deblur(&config, &blurry, &op, Some(&eval)).unwrap();
    assert!(history.aborted_at.is_none(), "training aborted");
    let (deblurred_psnr, _) = eval.evaluate(&model).unwrap();

    let pass = deblurred_psnr >= blurry_psnr + 2.0;
    pass_line(
        "12 (desk-scale deblurring with proxy loss)",
        pass,
        &format!("blurry {blurry_psnr:.2} dB, deblurred {deblurred_psnr:.2} dB"),
    );
    assert!(pass, "deblurred {deblurred_psnr:.2} vs blurry {blurry_psnr:.2}");
}

// --------------------------------------------------------------- criterion 13

#[test]
fn criterion_13_determinism_bitwise() {
    // criterion 1 rerun
    let first = CRIT1_REPORT.get_or_init(run_criterion1).clone();
    let second = run_criterion1();
    let c1_ok = first == second;

    // criterion 3 rerun
    let first3 = CRIT3_REPORT.get_or_init(run_criterion3).clone();
    let second3 = run_criterion3();
    let c3_ok = first3 == second3;

    // criterion 7 rerun in single-threaded mode; results must match the
    // cached run bit for bit (work reduction is thread-count invariant)
    let cached = crit7();
    let rerun = run_training_criterion(NoiseSpec::gaussian(25.0 / 255.0), 4.0, 1);
    let c7_report_ok = cached.report_json == rerun.report_json;
    let c7_ckpt_ok = cached.checkpoint_bytes == rerun.checkpoint_bytes;

    let pass = c1_ok && c3_ok && c7_report_ok && c7_ckpt_ok;
    pass_line(
        "13 (bitwise determinism of criteria 1, 3, 7)",
        pass,
        &format!(
            "prop1 report {}, gradient report {}, training report {}, checkpoint {}",
            c1_ok, c3_ok, c7_report_ok, c7_ckpt_ok
        ),
    );
    assert!(c1_ok, "criterion 1 reports differ");
    assert!(c3_ok, "criterion 3 reports differ");
    assert!(c7_report_ok, "criterion 7 reports differ");
    assert!(c7_ckpt_ok, "criterion 7 checkpoints differ");
}

// ------------------------------------------------- remaining suite coverage

/// Prop 2 bound on linear and rectifier denoisers (part of the theory gate,
/// exercised through the same suite the CLI exposes).
#[test]
fn prop2_bound_suite_passes() {
    let report = suites::prop2_suite(21, 40_000, THREADS).unwrap();
    for line in report.summary_lines() {
        println!("{line}");
    }
    assert!(report.pass, "{:#?}", report.checks);
}
