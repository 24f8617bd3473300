//! Training objectives.
//!
//! All losses are per-pixel means rather than per-image sums, which keeps the
//! penalty weight comparable across patch sizes; the minimizers are
//! unchanged. The empirical loss regresses `R(y + alpha z)` onto the target
//! `y - z / alpha`; the partial-linearity penalty compares `R` at a convex
//! pair of sparse perturbations of the input.

use crate::autodiff::{conv2d_forward, Tape, ValueId};
use crate::error::{Error, Result};
use crate::model::{DenoiserModel, ModelParams};
use crate::noise::{sample_auxiliary, CorruptedSample, NoiseKind, NoiseSpec};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::{Real, TensorImage};

/// A convex pair of perturbed inputs satisfying
/// `tau1 * q1 + tau2 * q2 == y_hat` bitwise, where `y_hat` is recombined from
/// the clipped pair so the identity survives clipping exactly.
#[derive(Debug, Clone)]
pub struct PerturbationPair {
    pub q1: TensorImage,
    pub q2: TensorImage,
    pub tau1: Real,
    /// Per-pixel diagonal weights; zero wherever `q` is zero.
    pub mask_m: TensorImage,
    /// The sparse perturbation vector after clipping.
    pub q: TensorImage,
    pub beta1: Real,
    pub beta2: Real,
    /// Exact convex combination of the clipped pair; the penalty evaluates
    /// the model here. Differs from the original input by at most rounding.
    pub y_hat: TensorImage,
    pub n_perturbed: usize,
}

impl PerturbationPair {
    pub fn tau2(&self) -> Real {
        1.0 - self.tau1
    }
}

/// Largest pixel-wise noise standard deviation over a batch of observations,
/// computed from the (possibly estimated, env-scaled) variance model.
pub fn sigma_max_for(spec: &NoiseSpec, observations: &[&TensorImage]) -> Result<Real> {
    spec.validate()?;
    let env = spec.env_scale;
    let v = match &spec.kind {
        NoiseKind::Gaussian { sigma } => env * sigma * sigma,
        NoiseKind::Poisson { lambda } => {
            let mut max_y: Real = 0.0;
            for y in observations {
                max_y = max_y.max(y.max_value());
            }
            env * max_y.max(0.0) / lambda
        }
        NoiseKind::VarMap { variance, .. } => {
            env * variance.iter().copied().fold(0.0, Real::max)
        }
    };
    Ok(v.sqrt())
}

/// Builds the sparse perturbation pair for one input.
///
/// The perturbation is drawn from the auxiliary distribution of `y`, kept on
/// a jittered 5-lattice (so at most `m/25` pixels are touched and any two
/// touched pixels are at least 4 apart), and clipped by scaling each pixel's
/// perturbation so both `q1` and `q2` stay inside
/// `[1.2a - 0.2b, 1.2b - 0.2a]` for `a = min(y_hat)`, `b = max(y_hat)`.
pub fn build_perturbation(
    y_hat: &TensorImage,
    spec: &NoiseSpec,
    y: &TensorImage,
    sigma_max: Real,
    rng: &mut SeededRng,
) -> Result<PerturbationPair> {
    if sigma_max <= 0.0 || !sigma_max.is_finite() {
        return Err(Error::parameter(format!("sigma_max must be > 0, got {sigma_max}")));
    }
    let (c, h, w) = y_hat.chw()?;
    let a = y_hat.min_value();
    let b = y_hat.max_value();

    let beta1 = rng.uniform_in(1.0, 1.5);
    let beta2 = rng.uniform_in(1.0, 1.5);
    let tau1 = beta2 / (beta1 + beta2);
    let tau2 = 1.0 - tau1;

    let ny = h / 5;
    let nx = w / 5;
    let degenerate = a == b || ny == 0 || nx == 0;

    let mut q = Tensor::zeros(y_hat.shape());
    let mut n_perturbed = 0usize;
    if !degenerate {
        let q_full = sample_auxiliary(spec, y, rng)?;
        let oy = rng.uniform_usize(h - 5 * (ny - 1));
        let ox = rng.uniform_usize(w - 5 * (nx - 1));
        let lo = 1.2 * a - 0.2 * b;
        let hi = 1.2 * b - 0.2 * a;
        for ch in 0..c {
            for iy in 0..ny {
                for ix in 0..nx {
                    let (py, px) = (oy + 5 * iy, ox + 5 * ix);
                    let qv = q_full.at(ch, py, px);
                    if qv == 0.0 {
                        continue;
                    }
                    let yv = y_hat.at(ch, py, px);
                    let room_down = yv - lo;
                    let room_up = hi - yv;
                    let scale = if qv > 0.0 {
                        (room_down / (beta1 * qv))
                            .min(room_up / (beta2 * qv))
                            .min(1.0)
                    } else {
                        (room_up / (beta1 * -qv))
                            .min(room_down / (beta2 * -qv))
                            .min(1.0)
                    };
                    let qc = scale.max(0.0) * qv;
                    if qc != 0.0 {
                        q.set(ch, py, px, qc);
                        n_perturbed += 1;
                    }
                }
            }
        }
    }

    let q1 = y_hat.zip_with(&q, |v, qv| v - beta1 * qv)?;
    let q2 = y_hat.zip_with(&q, |v, qv| v + beta2 * qv)?;
    // Recombine so the convex identity is exact by construction.
    let y_hat_rec = q1.zip_with(&q2, |a1, a2| tau1 * a1 + tau2 * a2)?;
    let mask_m = q1.zip_with(&q2, |a1, a2| 1.0 / ((a1 - a2).abs() + 0.1 * sigma_max))?;
    let mask_m = mask_m.zip_with(&q, |m, qv| if qv != 0.0 { m } else { 0.0 })?;

    Ok(PerturbationPair {
        q1,
        q2,
        tau1,
        mask_m,
        q,
        beta1,
        beta2,
        y_hat: y_hat_rec,
        n_perturbed,
    })
}

fn batch_mean(tape: &mut Tape<Real>, terms: &[ValueId]) -> Result<ValueId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / terms.len() as Real))
}

fn build_empirical_term(
    tape: &mut Tape<Real>,
    model: &DenoiserModel<Real>,
    params: &ModelParams,
    sample: &CorruptedSample,
) -> Result<ValueId> {
    let input = tape.constant(sample.y_hat.clone());
    let target = tape.constant(sample.target.clone());
    let out = model.forward_tape(tape, params, input)?;
    let diff = tape.sub(out, target)?;
    tape.mean_sq(diff)
}

fn build_empirical(
    tape: &mut Tape<Real>,
    model: &DenoiserModel<Real>,
    params: &ModelParams,
    batch: &[CorruptedSample],
) -> Result<ValueId> {
    if batch.is_empty() {
        return Err(Error::parameter("empirical loss needs a nonempty batch".to_string()));
    }
    let terms = batch
        .iter()
        .map(|s| build_empirical_term(tape, model, params, s))
        .collect::<Result<Vec<_>>>()?;
    batch_mean(tape, &terms)
}

/// Penalty graph: `||M (R(y_hat) - tau1 R(q1) - tau2 R(q2))||^2 / n_perturbed`.
/// `post_conv` optionally applies a fixed kernel (the deblurring forward
/// operator) to the combination before masking.
fn build_plc_term(
    tape: &mut Tape<Real>,
    model: &DenoiserModel<Real>,
    params: &ModelParams,
    pair: &PerturbationPair,
    post_conv: Option<(ValueId, ValueId)>,
) -> Result<ValueId> {
    if pair.n_perturbed == 0 {
        return Ok(tape.constant(Tensor::from_vec(&[1], vec![0.0])?));
    }
    let yh = tape.constant(pair.y_hat.clone());
    let r_y = model.forward_tape(tape, params, yh)?;
    build_plc_from_output(tape, model, params, pair, r_y, post_conv)
}

/// Empirical auxiliary-vector loss, value only.
pub fn empirical_loss(model: &DenoiserModel<Real>, batch: &[CorruptedSample]) -> Result<Real> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let loss = build_empirical(&mut tape, model, &params, batch)?;
    tape.scalar_value(loss)
}

pub fn empirical_loss_with_grads(
    model: &DenoiserModel<Real>,
    batch: &[CorruptedSample],
) -> Result<(Real, Vec<TensorImage>)> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let loss = build_empirical(&mut tape, model, &params, batch)?;
    tape.backward(loss)?;
    Ok((tape.scalar_value(loss)?, model.gradients(&tape, &params)))
}

/// Partial-linearity penalty for one pair, value only.
pub fn plc_penalty(model: &DenoiserModel<Real>, pair: &PerturbationPair) -> Result<Real> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let loss = build_plc_term(&mut tape, model, &params, pair, None)?;
    tape.scalar_value(loss)
}

pub fn plc_penalty_with_grads(
    model: &DenoiserModel<Real>,
    pair: &PerturbationPair,
) -> Result<(Real, Vec<TensorImage>)> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let loss = build_plc_term(&mut tape, model, &params, pair, None)?;
    tape.backward(loss)?;
    Ok((tape.scalar_value(loss)?, model.gradients(&tape, &params)))
}

/// Penalty combination from an existing `R(y_hat)` node, so the empirical
/// term and the penalty share one forward pass when the pair was built for
/// exactly this input.
fn build_plc_from_output(
    tape: &mut Tape<Real>,
    model: &DenoiserModel<Real>,
    params: &ModelParams,
    pair: &PerturbationPair,
    r_yhat: ValueId,
    post_conv: Option<(ValueId, ValueId)>,
) -> Result<ValueId> {
    if pair.n_perturbed == 0 {
        return Ok(tape.constant(Tensor::from_vec(&[1], vec![0.0])?));
    }
    let q1 = tape.constant(pair.q1.clone());
    let q2 = tape.constant(pair.q2.clone());
    let r_q1 = model.forward_tape(tape, params, q1)?;
    let r_q2 = model.forward_tape(tape, params, q2)?;
    let t1 = tape.scale(r_q1, pair.tau1);
    let t2 = tape.scale(r_q2, pair.tau2());
    let mut comb = tape.sub(r_yhat, t1)?;
    comb = tape.sub(comb, t2)?;
    if let Some((kernel, kbias)) = post_conv {
        comb = tape.conv2d(comb, kernel, kbias)?;
    }
    let mask = tape.constant(pair.mask_m.clone());
    let masked = tape.mul(comb, mask)?;
    // per-pixel mean over all m pixels, like every other loss, so the
    // penalty weight carries the same meaning as in the per-image-sum form
    let m = pair.mask_m.len() as Real;
    tape.sum_sq_scaled(masked, m)
}

fn build_total_denoise(
    tape: &mut Tape<Real>,
    model: &DenoiserModel<Real>,
    params: &ModelParams,
    batch: &[CorruptedSample],
    pairs: Option<&[PerturbationPair]>,
    gamma: Real,
) -> Result<ValueId> {
    if gamma < 0.0 {
        return Err(Error::parameter("gamma must be >= 0".to_string()));
    }
    if batch.is_empty() {
        return Err(Error::parameter("loss needs a nonempty batch".to_string()));
    }
    if gamma == 0.0 {
        return build_empirical(tape, model, params, batch);
    }
    let pairs = pairs
        .ok_or_else(|| Error::parameter("gamma > 0 requires perturbation pairs".to_string()))?;
    if pairs.len() != batch.len() {
        return Err(Error::parameter("one perturbation pair per sample required".to_string()));
    }
    let mut emp_terms = Vec::with_capacity(batch.len());
    let mut pen_terms = Vec::with_capacity(batch.len());
    for (sample, pair) in batch.iter().zip(pairs) {
        let input = tape.constant(sample.y_hat.clone());
        let target = tape.constant(sample.target.clone());
        let r = model.forward_tape(tape, params, input)?;
        let diff = tape.sub(r, target)?;
        emp_terms.push(tape.mean_sq(diff)?);
        let r_for_pen = if pair.y_hat.data() == sample.y_hat.data() {
            r
        } else {
            let pin = tape.constant(pair.y_hat.clone());
            model.forward_tape(tape, params, pin)?
        };
        pen_terms.push(build_plc_from_output(tape, model, params, pair, r_for_pen, None)?);
    }
    let emp = batch_mean(tape, &emp_terms)?;
    let pen = batch_mean(tape, &pen_terms)?;
    let weighted = tape.scale(pen, gamma);
    tape.add(emp, weighted)
}

/// `empirical + gamma * mean(penalty)`; gamma = 0 skips the penalty graph
/// entirely, so its gradient contribution is identically zero.
pub fn total_denoise_loss(
    model: &DenoiserModel<Real>,
    batch: &[CorruptedSample],
    pairs: Option<&[PerturbationPair]>,
    gamma: Real,
) -> Result<Real> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let loss = build_total_denoise(&mut tape, model, &params, batch, pairs, gamma)?;
    tape.scalar_value(loss)
}

pub fn total_denoise_loss_with_grads(
    model: &DenoiserModel<Real>,
    batch: &[CorruptedSample],
    pairs: Option<&[PerturbationPair]>,
    gamma: Real,
) -> Result<(Real, Vec<TensorImage>)> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let loss = build_total_denoise(&mut tape, model, &params, batch, pairs, gamma)?;
    tape.backward(loss)?;
    Ok((tape.scalar_value(loss)?, model.gradients(&tape, &params)))
}

/// Plain supervised MSE on `(noisy, clean)` pairs, for the baseline that
/// shares every other code path with the unsupervised trainer.
pub fn supervised_loss_with_grads(
    model: &DenoiserModel<Real>,
    batch: &[(TensorImage, TensorImage)],
) -> Result<(Real, Vec<TensorImage>)> {
    if batch.is_empty() {
        return Err(Error::parameter("supervised loss needs a nonempty batch".to_string()));
    }
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let terms = batch
        .iter()
        .map(|(y, x)| {
            let input = tape.constant(y.clone());
            let target = tape.constant(x.clone());
            let out = model.forward_tape(&mut tape, &params, input)?;
            let diff = tape.sub(out, target)?;
            tape.mean_sq(diff)
        })
        .collect::<Result<Vec<_>>>()?;
    let loss = batch_mean(&mut tape, &terms)?;
    tape.backward(loss)?;
    Ok((tape.scalar_value(loss)?, model.gradients(&tape, &params)))
}

/// A known linear forward operator: zero-padded 2-D convolution.
#[derive(Debug, Clone)]
pub struct DeblurOperator {
    kernel: TensorImage, // (k, k)
}

impl DeblurOperator {
    pub fn new(kernel: TensorImage) -> Result<Self> {
        let shape = kernel.shape().to_vec();
        match shape.as_slice() {
            [kh, kw] if kh == kw && kh % 2 == 1 => Ok(DeblurOperator { kernel }),
            other => Err(Error::parameter(format!(
                "deblur kernel must be odd square (k,k), got {other:?}"
            ))),
        }
    }

    /// Single 1 at the center; applying it is the identity.
    pub fn identity(k: usize) -> Result<Self> {
        let mut kernel = Tensor::zeros(&[k, k]);
        kernel.data_mut()[(k / 2) * k + k / 2] = 1.0;
        Self::new(kernel)
    }

    /// Uniform k x k box kernel, entries 1 / k^2.
    pub fn box_blur(k: usize) -> Result<Self> {
        Self::new(Tensor::full(&[k, k], 1.0 / (k * k) as Real))
    }

    pub fn kernel(&self) -> &TensorImage {
        &self.kernel
    }

    fn weight_tensor(&self) -> TensorImage {
        let k = self.kernel.shape()[0];
        Tensor::from_vec(&[1, 1, k, k], self.kernel.data().to_vec()).expect("shape consistent")
    }

    /// Applies the operator to a single-channel image.
    pub fn apply(&self, img: &TensorImage) -> Result<TensorImage> {
        conv2d_forward(img, &self.weight_tensor(), &Tensor::zeros(&[1]))
    }
}

/// Rasterized random-walk motion kernel: a walk of `steps` moves on a
/// `k x k` grid starting at the center, counts normalized to sum 1.
pub fn random_motion_kernel(k: usize, steps: usize, rng: &mut SeededRng) -> Result<DeblurOperator> {
    if k % 2 == 0 || k == 0 {
        return Err(Error::parameter("motion kernel extent must be odd".to_string()));
    }
    let mut counts = vec![0.0f64; k * k];
    let (mut y, mut x) = (k as isize / 2, k as isize / 2);
    counts[(y * k as isize + x) as usize] += 1.0;
    for _ in 0..steps {
        let (dy, dx) = match rng.uniform_usize(4) {
            0 => (0, 1),
            1 => (0, -1),
            2 => (1, 0),
            _ => (-1, 0),
        };
        y = (y + dy).clamp(0, k as isize - 1);
        x = (x + dx).clamp(0, k as isize - 1);
        counts[(y * k as isize + x) as usize] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let kernel = Tensor::from_vec(&[k, k], counts.into_iter().map(|c| c / total).collect())?;
    DeblurOperator::new(kernel)
}

fn register_operator(tape: &mut Tape<Real>, op: &DeblurOperator) -> (ValueId, ValueId) {
    let kernel = tape.constant(op.weight_tensor());
    let kbias = tape.constant(Tensor::zeros(&[1]));
    (kernel, kbias)
}

fn build_deblur_term(
    tape: &mut Tape<Real>,
    model: &DenoiserModel<Real>,
    params: &ModelParams,
    op_ids: (ValueId, ValueId),
    sample: &CorruptedSample,
) -> Result<ValueId> {
    let input = tape.constant(sample.y_hat.clone());
    let target = tape.constant(sample.target.clone());
    let restored = model.forward_tape(tape, params, input)?;
    let reblurred = tape.conv2d(restored, op_ids.0, op_ids.1)?;
    let diff = tape.sub(reblurred, target)?;
    tape.mean_sq(diff)
}

fn build_deblur(
    tape: &mut Tape<Real>,
    model: &DenoiserModel<Real>,
    params: &ModelParams,
    op: &DeblurOperator,
    batch: &[CorruptedSample],
) -> Result<ValueId> {
    if batch.is_empty() {
        return Err(Error::parameter("deblur loss needs a nonempty batch".to_string()));
    }
    let op_ids = register_operator(tape, op);
    let terms = batch
        .iter()
        .map(|s| build_deblur_term(tape, model, params, op_ids, s))
        .collect::<Result<Vec<_>>>()?;
    batch_mean(tape, &terms)
}

/// `mean || A R(y_hat) - (y - z/alpha) ||^2` per pixel.
pub fn deblur_loss(
    model: &DenoiserModel<Real>,
    op: &DeblurOperator,
    batch: &[CorruptedSample],
) -> Result<Real> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let loss = build_deblur(&mut tape, model, &params, op, batch)?;
    tape.scalar_value(loss)
}

pub fn deblur_loss_with_grads(
    model: &DenoiserModel<Real>,
    op: &DeblurOperator,
    batch: &[CorruptedSample],
) -> Result<(Real, Vec<TensorImage>)> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let loss = build_deblur(&mut tape, model, &params, op, batch)?;
    tape.backward(loss)?;
    Ok((tape.scalar_value(loss)?, model.gradients(&tape, &params)))
}

/// Synthetic supervised pair built from the model's own output: the pseudo
/// ground truth is detached, so gradients flow only through the outer
/// restoration of `y_prox`.
#[derive(Debug, Clone)]
pub struct ProxySample {
    pub x_prox: TensorImage,
    pub y_prox: TensorImage,
}

pub fn make_proxy_sample(
    model: &DenoiserModel<Real>,
    y: &TensorImage,
    a_prox: &DeblurOperator,
    n_prox: &TensorImage,
) -> Result<ProxySample> {
    let x_prox = model.forward(y)?;
    let y_prox = a_prox.apply(&x_prox)?.add(n_prox)?;
    Ok(ProxySample { x_prox, y_prox })
}

fn build_proxy_term(
    tape: &mut Tape<Real>,
    model: &DenoiserModel<Real>,
    params: &ModelParams,
    proxy: &ProxySample,
) -> Result<ValueId> {
    let input = tape.constant(proxy.y_prox.clone());
    let target = tape.constant(proxy.x_prox.clone());
    let out = model.forward_tape(tape, params, input)?;
    let diff = tape.sub(out, target)?;
    tape.mean_sq(diff)
}

/// Proxy loss `|| R(y_prox) - x_prox ||^2 / m` with `x_prox` held fixed.
pub fn proxy_loss(model: &DenoiserModel<Real>, proxy: &ProxySample) -> Result<Real> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let loss = build_proxy_term(&mut tape, model, &params, proxy)?;
    tape.scalar_value(loss)
}

pub fn proxy_loss_with_grads(
    model: &DenoiserModel<Real>,
    proxy: &ProxySample,
) -> Result<(Real, Vec<TensorImage>)> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let loss = build_proxy_term(&mut tape, model, &params, proxy)?;
    tape.backward(loss)?;
    Ok((tape.scalar_value(loss)?, model.gradients(&tape, &params)))
}

/// Full deblurring objective `L_b + gamma_prox * L_prox + gamma * L_c`, with
/// the penalty applied to `A R` (the combination is convolved with `A`
/// before masking).
#[allow(clippy::too_many_arguments)]
pub fn total_deblur_loss_with_grads(
    model: &DenoiserModel<Real>,
    op: &DeblurOperator,
    batch: &[CorruptedSample],
    pairs: Option<&[PerturbationPair]>,
    gamma: Real,
    proxies: Option<&[ProxySample]>,
    gamma_prox: Real,
) -> Result<(Real, Vec<TensorImage>)> {
    if gamma < 0.0 || gamma_prox < 0.0 {
        return Err(Error::parameter("gamma and gamma_prox must be >= 0".to_string()));
    }
    if batch.is_empty() {
        return Err(Error::parameter("deblur loss needs a nonempty batch".to_string()));
    }
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let op_ids = register_operator(&mut tape, op);
    if let Some(pairs) = pairs {
        if gamma > 0.0 && pairs.len() != batch.len() {
            return Err(Error::parameter("one perturbation pair per sample required".to_string()));
        }
    } else if gamma > 0.0 {
        return Err(Error::parameter("gamma > 0 requires perturbation pairs".to_string()));
    }
    let mut data_terms = Vec::with_capacity(batch.len());
    let mut pen_terms = Vec::with_capacity(batch.len());
    for (i, sample) in batch.iter().enumerate() {
        let input = tape.constant(sample.y_hat.clone());
        let target = tape.constant(sample.target.clone());
        let restored = model.forward_tape(&mut tape, &params, input)?;
        let reblurred = tape.conv2d(restored, op_ids.0, op_ids.1)?;
        let diff = tape.sub(reblurred, target)?;
        data_terms.push(tape.mean_sq(diff)?);
        if gamma > 0.0 {
            let pair = &pairs.expect("checked above")[i];
            let r_for_pen = if pair.y_hat.data() == sample.y_hat.data() {
                restored
            } else {
                let pin = tape.constant(pair.y_hat.clone());
                model.forward_tape(&mut tape, &params, pin)?
            };
            pen_terms.push(build_plc_from_output(
                &mut tape,
                model,
                &params,
                pair,
                r_for_pen,
                Some(op_ids),
            )?);
        }
    }
    let mut loss = batch_mean(&mut tape, &data_terms)?;
    if gamma_prox > 0.0 {
        let proxies = proxies.ok_or_else(|| {
            Error::parameter("gamma_prox > 0 requires proxy samples".to_string())
        })?;
        let terms = proxies
            .iter()
            .map(|p| build_proxy_term(&mut tape, model, &params, p))
            .collect::<Result<Vec<_>>>()?;
        let mean = batch_mean(&mut tape, &terms)?;
        let weighted = tape.scale(mean, gamma_prox);
        loss = tape.add(loss, weighted)?;
    }
    if gamma > 0.0 {
        let mean = batch_mean(&mut tape, &pen_terms)?;
        let weighted = tape.scale(mean, gamma);
        loss = tape.add(loss, weighted)?;
    }
    tape.backward(loss)?;
    Ok((tape.scalar_value(loss)?, model.gradients(&tape, &params)))
}
