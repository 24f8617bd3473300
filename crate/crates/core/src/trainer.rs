//! Training orchestration: patch pipeline with augmentation, the two-stage
//! unsupervised schedule, the supervised baseline, deblurring with the proxy
//! loss, and a synthetic piecewise-constant corpus generator so nothing here
//! needs an external dataset.
//!
//! Determinism: every random draw flows through substreams keyed by
//! `(purpose, step, sample)`, and per-sample gradients are averaged in
//! sample order, so a fixed seed reproduces checkpoints bitwise for any
//! thread count.

use crate::error::{Error, Result};
use crate::losses::{
    build_perturbation, make_proxy_sample, sigma_max_for, supervised_loss_with_grads,
    total_deblur_loss_with_grads, total_denoise_loss_with_grads, DeblurOperator,
    PerturbationPair, ProxySample,
};
use crate::metrics::{psnr, ssim};
use crate::model::{DenoiserModel, ModelConfig};
use crate::noise::{corrupt_observation, sample_auxiliary, sample_noise, CorruptedSample, NoiseSpec};
use crate::optim::{schedule_lr, AdamState};
use crate::parallel::map_indexed;
use crate::rng::{stream_label, SeededRng};
use crate::tensor::Tensor;
use crate::{Real, TensorImage};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Denoise,
    Deblur,
    SupervisedBaseline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    /// Piecewise-constant `(start_step, lr)` pairs, strictly increasing.
    pub lr_schedule: Vec<(usize, Real)>,
    pub batch_size: usize,
    pub patch_size: (usize, usize),
    /// Fixed alpha for stage one (the schedule fixes it to 1).
    pub alpha_stage1: Real,
    /// Uniform range for per-sample alpha in stage two.
    pub alpha_stage2: (Real, Real),
    pub gamma: Real,
    pub gamma_prox: Real,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub mode: TrainMode,
    pub model: ModelConfig,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_eval_interval() -> usize {
    200
}

fn default_threads() -> usize {
    1
}

impl TrainConfig {
    /// Desk-scale defaults: two 2000-step stages, batch 16, learning rate
    /// restarted per stage and dropping to 1e-4 at 60% of each stage.
    pub fn desk_defaults(noise: NoiseSpec, mode: TrainMode, seed: u64) -> Self {
        TrainConfig {
            stage1_steps: 2000,
            stage2_steps: 2000,
            lr_schedule: vec![(0, 1e-3), (1200, 1e-4), (2000, 1e-3), (3200, 1e-4)],
            batch_size: 16,
            patch_size: (16, 16),
            alpha_stage1: 1.0,
            alpha_stage2: (0.1, 0.5),
            gamma: 4.0,
            gamma_prox: 0.0,
            seed,
            noise,
            mode,
            model: ModelConfig::default(),
            eval_interval: default_eval_interval(),
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.noise.validate()?;
        if self.batch_size == 0 {
            return Err(Error::parameter("batch_size must be > 0".to_string()));
        }
        if self.lr_schedule.is_empty() {
            return Err(Error::parameter("lr_schedule must be nonempty".to_string()));
        }
        if self.lr_schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::parameter(
                "lr_schedule must be strictly increasing in step".to_string(),
            ));
        }
        if self.alpha_stage1 == 0.0 {
            return Err(Error::parameter("alpha_stage1 must be nonzero".to_string()));
        }
        let (lo, hi) = self.alpha_stage2;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::parameter("alpha_stage2 range must satisfy 0 < lo <= hi".to_string()));
        }
        if self.gamma < 0.0 || self.gamma_prox < 0.0 {
            return Err(Error::parameter("gamma values must be >= 0".to_string()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.stage1_steps + self.stage2_steps
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HistoryRow {
    pub step: usize,
    pub loss: Real,
    pub psnr: Option<Real>,
    pub ssim: Option<Real>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
    /// Set when training aborted on a non-finite loss; the returned model is
    /// the last good checkpoint.
    pub aborted_at: Option<usize>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut out = String::from("step,loss,psnr,ssim\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.step,
                r.loss,
                r.psnr.map_or(String::new(), |v| v.to_string()),
                r.ssim.map_or(String::new(), |v| v.to_string()),
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Held-out pairs for PSNR/SSIM tracking during training.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub clean: Vec<TensorImage>,
    pub noisy: Vec<TensorImage>,
}

impl EvalSet {
    pub fn new(clean: Vec<TensorImage>, noisy: Vec<TensorImage>) -> Result<Self> {
        if clean.len() != noisy.len() || clean.is_empty() {
            return Err(Error::parameter("eval set needs matching nonempty image lists".to_string()));
        }
        Ok(EvalSet { clean, noisy })
    }

    /// Mean PSNR/SSIM of the model restorations over the set.
    pub fn evaluate(&self, model: &DenoiserModel<Real>) -> Result<(Real, Real)> {
        let mut p = 0.0;
        let mut s = 0.0;
        for (x, y) in self.clean.iter().zip(&self.noisy) {
            let restored = model.forward(y)?;
            p += psnr(&restored, x, 1.0)?;
            s += ssim(&restored, x)?;
        }
        let n = self.clean.len() as Real;
        Ok((p / n, s / n))
    }

    /// Mean PSNR of the raw observations against the clean images.
    pub fn noisy_psnr(&self) -> Result<Real> {
        let mut p = 0.0;
        for (x, y) in self.clean.iter().zip(&self.noisy) {
            p += psnr(y, x, 1.0)?;
        }
        Ok(p / self.clean.len() as Real)
    }
}

pub fn flip_horizontal(t: &TensorImage) -> TensorImage {
    let (_, h, w) = t.chw().expect("image tensor");
    Tensor::from_fn(t.shape(), |i| {
        let ch = i / (h * w);
        let rest = i % (h * w);
        let (y, x) = (rest / w, rest % w);
        t.at(ch, y, w - 1 - x)
    })
}

pub fn flip_vertical(t: &TensorImage) -> TensorImage {
    let (_, h, w) = t.chw().expect("image tensor");
    Tensor::from_fn(t.shape(), |i| {
        let ch = i / (h * w);
        let rest = i % (h * w);
        let (y, x) = (rest / w, rest % w);
        t.at(ch, h - 1 - y, x)
    })
}

/// Random crops with random horizontal/vertical flips. Images smaller than
/// the patch are skipped at construction with a warning.
pub struct PatchSampler {
    images: Vec<TensorImage>,
    patch: (usize, usize),
}

impl PatchSampler {
    pub fn new(corpus: &[TensorImage], patch: (usize, usize)) -> Result<Self> {
        let mut images = Vec::new();
        let mut skipped = 0usize;
        for img in corpus {
            let (_, h, w) = img.chw()?;
            if h < patch.0 || w < patch.1 {
                skipped += 1;
                continue;
            }
            images.push(img.clone());
        }
        if skipped > 0 {
            log::warn!("patch sampler skipped {skipped} undersized images");
        }
        if images.is_empty() {
            return Err(Error::parameter("no images large enough for the patch size".to_string()));
        }
        Ok(PatchSampler { images, patch })
    }

    pub fn sample(&self, rng: &mut SeededRng) -> TensorImage {
        let img = &self.images[rng.uniform_usize(self.images.len())];
        let (c, h, w) = img.chw().expect("image tensor");
        let (ph, pw) = self.patch;
        let oy = rng.uniform_usize(h - ph + 1);
        let ox = rng.uniform_usize(w - pw + 1);
        let mut crop = Tensor::zeros(&[c, ph, pw]);
        for ch in 0..c {
            for y in 0..ph {
                for x in 0..pw {
                    crop.set(ch, y, x, img.at(ch, oy + y, ox + x));
                }
            }
        }
        let crop = if rng.coin_flip() { flip_horizontal(&crop) } else { crop };
        if rng.coin_flip() {
            flip_vertical(&crop)
        } else {
            crop
        }
    }
}

/// Random piecewise-constant 32x32-style images with occasional ramps; the
/// whole acceptance suite trains on these.
pub fn synthetic_corpus(count: usize, shape: (usize, usize), rng: &mut SeededRng) -> Vec<TensorImage> {
    let (h, w) = shape;
    (0..count)
        .map(|_| {
            let base = rng.uniform_in(0.2, 0.8);
            let mut img = Tensor::full(&[1, h, w], base);
            let rects = 1 + rng.uniform_usize(4);
            for _ in 0..rects {
                let y0 = rng.uniform_usize(h);
                let x0 = rng.uniform_usize(w);
                let rh = 1 + rng.uniform_usize(h - y0);
                let rw = 1 + rng.uniform_usize(w - x0);
                let level = rng.uniform_in(0.1, 0.9);
                for y in y0..y0 + rh {
                    for x in x0..x0 + rw {
                        img.set(0, y, x, level);
                    }
                }
            }
            if rng.coin_flip() {
                let gy = rng.uniform_in(-0.3, 0.3) / h as Real;
                let gx = rng.uniform_in(-0.3, 0.3) / w as Real;
                img = Tensor::from_fn(&[1, h, w], |i| {
                    let (y, x) = ((i / w) % h, i % w);
                    img.data()[i] + gy * y as Real + gx * x as Real
                });
            }
            img.clamp_values(0.02, 0.98)
        })
        .collect()
}

/// Applies the corruption once per image: the fixed noisy dataset, one
/// observation each, that unsupervised training consumes.
pub fn corrupt_corpus(
    clean: &[TensorImage],
    spec: &NoiseSpec,
    rng: &mut SeededRng,
) -> Result<Vec<TensorImage>> {
    clean
        .iter()
        .map(|x| Ok(x.add(&sample_noise(spec, x, rng)?)?))
        .collect()
}

fn step_stream(base: u64, step: usize, sample: usize) -> u64 {
    base.wrapping_add((step as u64) << 20)
        .wrapping_add(sample as u64 + 1)
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    model: DenoiserModel<Real>,
    adam: AdamState<Real>,
    history: TrainHistory,
    checkpoint: Vec<TensorImage>,
    eval: Option<&'a EvalSet>,
}

impl<'a> Trainer<'a> {
    fn new(
        config: &'a TrainConfig,
        eval: Option<&'a EvalSet>,
        warm_start: Option<&DenoiserModel<Real>>,
    ) -> Result<Self> {
        config.validate()?;
        let model = match warm_start {
            Some(base) => {
                base.config().validate()?;
                base.clone()
            }
            None => {
                let mut init_rng = SeededRng::with_stream(config.seed, stream_label("train.init"));
                DenoiserModel::init(&config.model, &mut init_rng)?
            }
        };
        let params = model.parameters();
        let adam = AdamState::new(&params, schedule_lr(&config.lr_schedule, 0));
        let checkpoint = params;
        Ok(Trainer {
            config,
            model,
            adam,
            history: TrainHistory::default(),
            checkpoint,
            eval,
        })
    }

    /// Applies one averaged gradient; returns false when training must stop
    /// on a non-finite loss (the model is rolled back to the checkpoint).
    fn apply(&mut self, step: usize, loss: Real, grads: Vec<TensorImage>) -> Result<bool> {
        if !loss.is_finite() {
            log::error!("non-finite loss at step {step}; restoring last checkpoint");
            self.model.set_parameters(&self.checkpoint)?;
            self.history.aborted_at = Some(step);
            return Ok(false);
        }
        self.adam.lr = schedule_lr(&self.config.lr_schedule, step);
        let mut params = self.model.parameters();
        match self.adam.step(&mut params, &grads) {
            Ok(()) => {
                self.model.set_parameters(&params)?;
                Ok(true)
            }
            Err(Error::NonFinite { .. }) => {
                log::error!("non-finite gradient at step {step}; restoring last checkpoint");
                self.model.set_parameters(&self.checkpoint)?;
                self.history.aborted_at = Some(step);
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    fn record(&mut self, step: usize, loss: Real) -> Result<()> {
        if step % self.config.eval_interval != 0 && step + 1 != self.config.total_steps() {
            return Ok(());
        }
        let (psnr, ssim) = match self.eval {
            Some(eval) => {
                let (p, s) = eval.evaluate(&self.model)?;
                (Some(p), Some(s))
            }
            None => (None, None),
        };
        self.history.rows.push(HistoryRow {
            step,
            loss,
            psnr,
            ssim,
        });
        self.checkpoint = self.model.parameters();
        Ok(())
    }

    fn finish(self) -> (DenoiserModel<Real>, TrainHistory) {
        (self.model, self.history)
    }
}

fn average_results(
    results: Vec<Result<(Real, Vec<TensorImage>)>>,
) -> Result<(Real, Vec<TensorImage>)> {
    let batch = results.len() as Real;
    let mut iter = results.into_iter();
    let (mut loss, mut grads) = iter.next().expect("nonempty batch")?;
    for r in iter {
        let (l, g) = r?;
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi)?;
        }
    }
    loss /= batch;
    for g in grads.iter_mut() {
        *g = g.scale(1.0 / batch);
    }
    Ok((loss, grads))
}

/// Unsupervised (or supervised-baseline) denoiser training.
///
/// `Denoise` mode consumes noisy observations only: stage one fixes
/// `alpha = 1` with no constraint, stage two draws `alpha` per sample and
/// activates the partial-linearity penalty. `SupervisedBaseline` consumes
/// clean images, synthesizes fresh noise each step and regresses onto the
/// clean targets; it shares every other code path.
pub fn train_denoiser(
    config: &TrainConfig,
    corpus: &[TensorImage],
    eval: Option<&EvalSet>,
) -> Result<(DenoiserModel<Real>, TrainHistory)> {
    train_denoiser_impl(config, corpus, eval, None)
}

/// Continues training from an existing model instead of a fresh
/// initialization; the refinement sweep fine-tunes through this.
pub fn fine_tune_denoiser(
    config: &TrainConfig,
    corpus: &[TensorImage],
    eval: Option<&EvalSet>,
    base: &DenoiserModel<Real>,
) -> Result<(DenoiserModel<Real>, TrainHistory)> {
    train_denoiser_impl(config, corpus, eval, Some(base))
}

fn train_denoiser_impl(
    config: &TrainConfig,
    corpus: &[TensorImage],
    eval: Option<&EvalSet>,
    warm_start: Option<&DenoiserModel<Real>>,
) -> Result<(DenoiserModel<Real>, TrainHistory)> {
    if config.mode == TrainMode::Deblur {
        return Err(Error::parameter("use train_deblur for deblurring mode".to_string()));
    }
    let mut trainer = Trainer::new(config, eval, warm_start)?;
    let sampler = PatchSampler::new(corpus, config.patch_size)?;
    let data_base = stream_label("train.data").wrapping_add(config.seed);

    for step in 0..config.total_steps() {
        let stage2 = step >= config.stage1_steps;
        let model = trainer.model.clone();
        let results = map_indexed(config.batch_size, config.threads, |i| {
            let mut rng = SeededRng::with_stream(config.seed, step_stream(data_base, step, i));
            match config.mode {
                TrainMode::SupervisedBaseline => {
                    let x = sampler.sample(&mut rng);
                    let n = sample_noise(&config.noise, &x, &mut rng)?;
                    let y = x.add(&n)?;
                    supervised_loss_with_grads(&model, &[(y, x)])
                }
                TrainMode::Denoise => {
                    let y = sampler.sample(&mut rng);
                    let alpha = if stage2 {
                        rng.uniform_in(config.alpha_stage2.0, config.alpha_stage2.1)
                    } else {
                        config.alpha_stage1
                    };
                    let mut sample = corrupt_observation(&y, &config.noise, alpha, &mut rng)?;
                    let gamma = if stage2 { config.gamma } else { 0.0 };
                    let pairs = if gamma > 0.0 {
                        let sigma_max = sigma_max_for(&config.noise, &[&sample.y])?;
                        let pair = build_perturbation(
                            &sample.y_hat,
                            &config.noise,
                            &sample.y,
                            sigma_max,
                            &mut rng,
                        )?;
                        // evaluate the model at the pair's exact convex
                        // combination so both terms share one forward pass
                        sample.y_hat = pair.y_hat.clone();
                        Some(vec![pair])
                    } else {
                        None
                    };
                    total_denoise_loss_with_grads(
                        &model,
                        std::slice::from_ref(&sample),
                        pairs.as_deref(),
                        gamma,
                    )
                }
                TrainMode::Deblur => unreachable!(),
            }
        });
        let (loss, grads) = average_results(results)?;
        if !trainer.apply(step, loss, grads)? {
            break;
        }
        trainer.record(step, loss)?;
    }
    Ok(trainer.finish())
}

/// Deblurring training from single noisy blurry observations with a known
/// forward kernel. The first stage runs the data loss alone; afterwards the
/// proxy loss and the partial-linearity constraint (applied to `A R`)
/// switch on.
pub fn train_deblur(
    config: &TrainConfig,
    corpus: &[TensorImage],
    op: &DeblurOperator,
    eval: Option<&EvalSet>,
) -> Result<(DenoiserModel<Real>, TrainHistory)> {
    if config.mode != TrainMode::Deblur {
        return Err(Error::parameter("train_deblur requires deblur mode".to_string()));
    }
    let mut trainer = Trainer::new(config, eval, None)?;
    let sampler = PatchSampler::new(corpus, config.patch_size)?;
    let data_base = stream_label("deblur.data").wrapping_add(config.seed);

    for step in 0..config.total_steps() {
        let phase2 = step >= config.stage1_steps;
        let model = trainer.model.clone();
        let results = map_indexed(config.batch_size, config.threads, |i| {
            let mut rng = SeededRng::with_stream(config.seed, step_stream(data_base, step, i));
            let y = sampler.sample(&mut rng);
            let alpha = rng.uniform_in(config.alpha_stage2.0, config.alpha_stage2.1);
            let mut sample: CorruptedSample =
                corrupt_observation(&y, &config.noise, alpha, &mut rng)?;
            let (gamma, gamma_prox) = if phase2 {
                (config.gamma, config.gamma_prox)
            } else {
                (0.0, 0.0)
            };
            let pairs: Option<Vec<PerturbationPair>> = if gamma > 0.0 {
                let sigma_max = sigma_max_for(&config.noise, &[&sample.y])?;
                let pair = build_perturbation(
                    &sample.y_hat,
                    &config.noise,
                    &sample.y,
                    sigma_max,
                    &mut rng,
                )?;
                sample.y_hat = pair.y_hat.clone();
                Some(vec![pair])
            } else {
                None
            };
            let proxies: Option<Vec<ProxySample>> = if gamma_prox > 0.0 {
                let a_prox = crate::losses::random_motion_kernel(
                    op.kernel().shape()[0],
                    4,
                    &mut rng,
                )?;
                let x_est = model.forward(&sample.y)?;
                let n_prox = sample_auxiliary(&config.noise, &x_est, &mut rng)?;
                Some(vec![make_proxy_sample(&model, &sample.y, &a_prox, &n_prox)?])
            } else {
                None
            };
            total_deblur_loss_with_grads(
                &model,
                op,
                std::slice::from_ref(&sample),
                pairs.as_deref(),
                gamma,
                proxies.as_deref(),
                gamma_prox,
            )
        });
        let (loss, grads) = average_results(results)?;
        if !trainer.apply(step, loss, grads)? {
            break;
        }
        trainer.record(step, loss)?;
    }
    Ok(trainer.finish())
}
