//! Noise-variance estimation from noisy data alone: neighbor-difference
//! statistics restricted to smooth regions, an intensity-binned variance
//! curve with a linear fit, a per-pixel multi-frame estimator, and the
//! refinement sweep that picks the variance parameter whose trained model
//! has the smallest positive `E<z, Lz>`.

use crate::decomposition::{zlz_statistic, Denoiser};
use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::{Real, TensorImage};
use serde::Serialize;

/// Average squared difference to the 4-connected neighbors:
/// `d_i^2 = sum_j (y_i - y_j)^2 / (2 |N(i)|)`; borders use what they have.
pub fn neighbor_diff_map(y: &TensorImage) -> Result<TensorImage> {
    let (c, h, w) = y.chw()?;
    if h < 2 || w < 2 {
        return Err(Error::parameter("neighbor_diff_map needs h, w >= 2".to_string()));
    }
    let mut out = Tensor::zeros(y.shape());
    for ch in 0..c {
        for iy in 0..h {
            for ix in 0..w {
                let v = y.at(ch, iy, ix);
                let mut sum = 0.0;
                let mut count = 0usize;
                if iy > 0 {
                    sum += (v - y.at(ch, iy - 1, ix)).powi(2);
                    count += 1;
                }
                if iy + 1 < h {
                    sum += (v - y.at(ch, iy + 1, ix)).powi(2);
                    count += 1;
                }
                if ix > 0 {
                    sum += (v - y.at(ch, iy, ix - 1)).powi(2);
                    count += 1;
                }
                if ix + 1 < w {
                    sum += (v - y.at(ch, iy, ix + 1)).powi(2);
                    count += 1;
                }
                out.set(ch, iy, ix, sum / (2.0 * count as Real));
            }
        }
    }
    Ok(out)
}

/// 10x10 uniform convolution, truncated and renormalized at the borders so
/// the weights always sum to one. The even kernel is anchored with offsets
/// `-4..=5`, i.e. at the top-left of the central 2x2 block.
fn box10(y: &TensorImage) -> Result<TensorImage> {
    let (c, h, w) = y.chw()?;
    let mut out = Tensor::zeros(y.shape());
    // prefix sums per channel for O(1) window sums
    for ch in 0..c {
        let mut prefix = vec![0.0; (h + 1) * (w + 1)];
        for iy in 0..h {
            for ix in 0..w {
                prefix[(iy + 1) * (w + 1) + ix + 1] = y.at(ch, iy, ix)
                    + prefix[iy * (w + 1) + ix + 1]
                    + prefix[(iy + 1) * (w + 1) + ix]
                    - prefix[iy * (w + 1) + ix];
            }
        }
        let window = |y0: usize, y1: usize, x0: usize, x1: usize| -> Real {
            prefix[y1 * (w + 1) + x1] - prefix[y0 * (w + 1) + x1] - prefix[y1 * (w + 1) + x0]
                + prefix[y0 * (w + 1) + x0]
        };
        for iy in 0..h {
            for ix in 0..w {
                let y0 = iy.saturating_sub(4);
                let y1 = (iy + 6).min(h);
                let x0 = ix.saturating_sub(4);
                let x1 = (ix + 6).min(w);
                let area = ((y1 - y0) * (x1 - x0)) as Real;
                out.set(ch, iy, ix, window(y0, y1, x0, x1) / area);
            }
        }
    }
    Ok(out)
}

/// Smooth-region detection: `s = k * y`, `f = k * (s - y)^2`, and the mask
/// keeps pixels with `f_i <= 0.02 (s_i - min_j s_j)`.
pub fn smooth_mask(y: &TensorImage) -> Result<(TensorImage, Vec<bool>)> {
    let (_, h, w) = y.chw()?;
    if h < 10 || w < 10 {
        return Err(Error::parameter("smooth_mask needs h, w >= 10".to_string()));
    }
    let s = box10(y)?;
    let sq = s.zip_with(y, |a, b| (a - b) * (a - b))?;
    let f = box10(&sq)?;
    let s_min = s.min_value();
    // the 1e-24 slack keeps exactly flat images fully covered despite
    // rounding in the window means
    let mask = f
        .data()
        .iter()
        .zip(s.data())
        .map(|(fi, si)| *fi <= 0.02 * (si - s_min) + 1e-24)
        .collect();
    Ok((s, mask))
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceBin {
    pub intensity: Real,
    pub variance: Real,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceCurve {
    pub bins: Vec<VarianceBin>,
    /// Parameters of the linear model `V(v) ~ (v - mu) / lambda`, clamped at
    /// zero for `v <= mu`. Populated by [`fit_linear`].
    pub fit_mu: Option<Real>,
    pub fit_lambda: Option<Real>,
    pub fit_intercept: Option<Real>,
    pub fit_slope: Option<Real>,
    pub fit_residual: Option<Real>,
}

impl VarianceCurve {
    /// Count-weighted mean of `V(v)` over the bins; the natural variance
    /// estimate when the curve is flat (Gaussian noise).
    pub fn weighted_mean_variance(&self) -> Real {
        let total: usize = self.bins.iter().map(|b| b.count).sum();
        if total == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .map(|b| b.variance * b.count as Real)
            .sum::<Real>()
            / total as Real
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut out = String::from("intensity,variance,count\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{}\n", b.intensity, b.variance, b.count));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Bins `d^2` over smooth pixels by smoothed intensity on the `1/255`
/// lattice (`|s_i - v| < 0.5/255`); empty bins are dropped.
pub fn binned_variance(
    s: &TensorImage,
    mask: &[bool],
    d2: &TensorImage,
) -> Result<VarianceCurve> {
    if mask.iter().all(|m| !m) {
        return Err(Error::estimation(
            "smooth mask is empty; no pixels available for variance binning".to_string(),
        ));
    }
    let mut sums = vec![0.0; 256];
    let mut counts = vec![0usize; 256];
    for i in 0..s.len() {
        if !mask[i] {
            continue;
        }
        let v = s.data()[i];
        let k = (v * 255.0).round();
        if !(0.0..=255.0).contains(&k) {
            continue;
        }
        // bin k collects |s - k/255| < 0.5/255, which is exactly rounding
        let k = k as usize;
        sums[k] += d2.data()[i];
        counts[k] += 1;
    }
    let bins: Vec<VarianceBin> = (0..256)
        .filter(|&k| counts[k] > 0)
        .map(|k| VarianceBin {
            intensity: k as Real / 255.0,
            variance: sums[k] / counts[k] as Real,
            count: counts[k],
        })
        .collect();
    Ok(VarianceCurve {
        bins,
        fit_mu: None,
        fit_lambda: None,
        fit_intercept: None,
        fit_slope: None,
        fit_residual: None,
    })
}

/// Convenience: neighbor differences + smooth mask + binning on one image.
pub fn variance_curve_for(y: &TensorImage) -> Result<VarianceCurve> {
    let d2 = neighbor_diff_map(y)?;
    let (s, mask) = smooth_mask(y)?;
    binned_variance(&s, &mask, &d2)
}

/// Merges curves from several images, count-weighted per bin.
pub fn merge_curves(curves: &[VarianceCurve]) -> Result<VarianceCurve> {
    let mut sums = vec![0.0; 256];
    let mut counts = vec![0usize; 256];
    for c in curves {
        for b in &c.bins {
            let k = (b.intensity * 255.0).round() as usize;
            sums[k] += b.variance * b.count as Real;
            counts[k] += b.count;
        }
    }
    let bins = (0..256)
        .filter(|&k| counts[k] > 0)
        .map(|k| VarianceBin {
            intensity: k as Real / 255.0,
            variance: sums[k] / counts[k] as Real,
            count: counts[k],
        })
        .collect();
    Ok(VarianceCurve {
        bins,
        fit_mu: None,
        fit_lambda: None,
        fit_intercept: None,
        fit_slope: None,
        fit_residual: None,
    })
}

/// Count-weighted least-squares fit `V(v) ~ (v - mu) / lambda`. Returns
/// `(mu, lambda)` and records intercept/slope and the weighted residual on
/// the curve. Degenerate abscissae are an error.
pub fn fit_linear(curve: &mut VarianceCurve) -> Result<(Real, Real)> {
    if curve.bins.len() < 2 {
        return Err(Error::estimation("fit_linear needs at least 2 bins".to_string()));
    }
    let pts: Vec<(Real, Real, Real)> = curve
        .bins
        .iter()
        .map(|b| (b.intensity, b.variance, b.count as Real))
        .collect();
    let (intercept, slope) = crate::linalg::weighted_line_fit(&pts)?;
    let (mu, lambda) = if slope.abs() > 0.0 {
        (-intercept / slope, 1.0 / slope)
    } else {
        (0.0, Real::INFINITY)
    };
    let wsum: Real = pts.iter().map(|p| p.2).sum();
    let resid = pts
        .iter()
        .map(|(v, var, w)| w * (var - (intercept + slope * v)).powi(2))
        .sum::<Real>()
        / wsum;
    curve.fit_mu = Some(mu);
    curve.fit_lambda = Some(lambda);
    curve.fit_intercept = Some(intercept);
    curve.fit_slope = Some(slope);
    curve.fit_residual = Some(resid);
    Ok((mu, lambda))
}

/// Evaluates the fitted model `max(0, (v - mu) / lambda)`.
pub fn fitted_variance_at(curve: &VarianceCurve, v: Real) -> Option<Real> {
    let (mu, lambda) = (curve.fit_mu?, curve.fit_lambda?);
    Some(((v - mu) / lambda).max(0.0))
}

/// Stack of equally shaped frames with independent noise.
#[derive(Debug, Clone)]
pub struct FrameStack {
    frames: Vec<TensorImage>,
}

impl FrameStack {
    pub fn new(frames: Vec<TensorImage>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::parameter("frame stack needs >= 2 frames".to_string()));
        }
        if frames.iter().any(|f| !f.same_shape(&frames[0])) {
            return Err(Error::parameter("frame shapes differ".to_string()));
        }
        Ok(FrameStack { frames })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Sum of all frames — the observation the denoiser is trained on.
    pub fn summed(&self) -> TensorImage {
        let mut total = self.frames[0].clone();
        for f in &self.frames[1..] {
            total.add_assign(f).expect("shapes checked");
        }
        total
    }
}

/// Per-pixel variance of the summed observation:
/// `V(i) = n/(n-1) * sum_j (a_i^{(j)} - y_i / n)^2`.
pub fn multiframe_variance(stack: &FrameStack) -> Result<TensorImage> {
    let n = stack.n_frames() as Real;
    let y = stack.summed();
    let mut v = Tensor::zeros(y.shape());
    for frame in &stack.frames {
        let centered = frame.zip_with(&y, |a, yi| a - yi / n)?;
        v.axpy_assign(1.0, &centered.mul_elem(&centered)?)?;
    }
    Ok(v.scale(n / (n - 1.0)))
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementRow {
    pub lambda: Real,
    pub statistic: Real,
    pub se: Real,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementReport {
    pub rows: Vec<RefinementRow>,
    pub chosen_lambda: Real,
    /// Set when every statistic was negative (variance overestimated
    /// everywhere); the least-negative candidate is returned instead.
    pub all_negative: bool,
}

/// Fine-tunes a model per candidate parameter, computes `E<z, Lz>` for each
/// on a constant image, and picks the candidate with the smallest positive
/// statistic. `spec_of` builds the noise spec for a candidate value;
/// `train_fn` returns the fine-tuned denoiser for it.
#[allow(clippy::too_many_arguments)]
pub fn refine_lambda<D, F, G>(
    mut train_fn: F,
    spec_of: G,
    candidates: &[Real],
    x_const: &TensorImage,
    alpha: Real,
    zlz_samples: usize,
    rng: &SeededRng,
    threads: usize,
) -> Result<RefinementReport>
where
    D: Denoiser,
    F: FnMut(Real, &mut SeededRng) -> Result<D>,
    G: Fn(Real) -> NoiseSpec,
{
    if candidates.is_empty() {
        return Err(Error::parameter("refine_lambda needs candidates".to_string()));
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for (i, &lambda) in candidates.iter().enumerate() {
        let mut train_rng = rng.substream(crate::rng::stream_label("refine.train") + i as u64);
        let model = train_fn(lambda, &mut train_rng)?;
        let spec = spec_of(lambda);
        let zlz_rng = rng.substream(crate::rng::stream_label("refine.zlz") + i as u64);
        let rep = zlz_statistic(&model, x_const, &spec, alpha, zlz_samples, &zlz_rng, threads)?;
        rows.push(RefinementRow {
            lambda,
            statistic: rep.statistic,
            se: rep.se,
        });
    }
    let positive_min = rows
        .iter()
        .filter(|r| r.statistic > 0.0)
        .min_by(|a, b| a.statistic.total_cmp(&b.statistic));
    let (chosen, all_negative) = match positive_min {
        Some(r) => (r.lambda, false),
        None => {
            log::warn!("refine_lambda: all statistics negative; variance overestimated everywhere");
            let least_negative = rows
                .iter()
                .max_by(|a, b| a.statistic.total_cmp(&b.statistic))
                .expect("nonempty");
            (least_negative.lambda, true)
        }
    };
    Ok(RefinementReport {
        rows,
        chosen_lambda: chosen,
        all_negative,
    })
}
