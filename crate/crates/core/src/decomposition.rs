//! Monte-Carlo decomposition of a denoiser at a fixed clean image:
//! `R(y_hat) = g(x) + L n_hat + e` with `g(x) = E[R(y_hat) | x]` and `L` the
//! least-squares-optimal linear response to the total noise `n_hat`.
//!
//! Estimators are two-pass and stream-deterministic: pass one accumulates the
//! conditional mean, pass two regenerates the identical noise realizations
//! from the same substreams and fits `L` and the residuals. Results are
//! bit-identical for any worker count because blocks are reduced in index
//! order.

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::model::DenoiserModel;
use crate::noise::{auxiliary_variance_map, sample_auxiliary, sample_noise, NoiseSpec};
use crate::parallel::map_indexed;
use crate::rng::{stream_label, SeededRng};
use crate::tensor::Tensor;
use crate::{Real, TensorImage};
use serde::Serialize;

/// Anything that maps a noisy image to a restored image.
pub trait Denoiser: Sync {
    fn restore(&self, input: &TensorImage) -> Result<TensorImage>;
}

impl Denoiser for DenoiserModel<Real> {
    fn restore(&self, input: &TensorImage) -> Result<TensorImage> {
        self.forward(input)
    }
}

/// `R(v) = gain * v`.
pub struct ScalarGainDenoiser(pub Real);

impl Denoiser for ScalarGainDenoiser {
    fn restore(&self, input: &TensorImage) -> Result<TensorImage> {
        Ok(input.scale(self.0))
    }
}

/// `R(v) = c` regardless of the input.
pub struct ConstantDenoiser(pub TensorImage);

impl Denoiser for ConstantDenoiser {
    fn restore(&self, _input: &TensorImage) -> Result<TensorImage> {
        Ok(self.0.clone())
    }
}

/// Elementwise rectifier, `R(v) = max(0, v)`.
pub struct ReluDenoiser;

impl Denoiser for ReluDenoiser {
    fn restore(&self, input: &TensorImage) -> Result<TensorImage> {
        Ok(input.map(|v| v.max(0.0)))
    }
}

/// Adapter for closures.
pub struct FnDenoiser<F>(pub F);

impl<F: Fn(&TensorImage) -> Result<TensorImage> + Sync> Denoiser for FnDenoiser<F> {
    fn restore(&self, input: &TensorImage) -> Result<TensorImage> {
        (self.0)(input)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Dense m x m least-squares fit; requires `n >= 2 m` and `m <= 4096`.
    Full,
    /// One scalar per pixel.
    Diagonal,
}

#[derive(Debug, Clone)]
pub enum LinearMap {
    Full(Matrix),
    Diagonal(TensorImage),
}

impl LinearMap {
    pub fn apply(&self, v: &TensorImage) -> Result<TensorImage> {
        match self {
            LinearMap::Full(m) => {
                let out = m.matvec(v.data())?;
                Tensor::from_vec(v.shape(), out)
            }
            LinearMap::Diagonal(d) => d.mul_elem(v),
        }
    }

    /// `sum_i L_ii * var_i`, i.e. `tr(L Cov)` for a diagonal covariance.
    pub fn trace_weighted(&self, var: &TensorImage) -> Real {
        match self {
            LinearMap::Full(m) => (0..m.rows().min(var.len()))
                .map(|i| m[(i, i)] * var.data()[i])
                .sum(),
            LinearMap::Diagonal(d) => d
                .data()
                .iter()
                .zip(var.data())
                .map(|(l, v)| l * v)
                .sum(),
        }
    }

    pub fn diagonal(&self) -> Vec<Real> {
        match self {
            LinearMap::Full(m) => (0..m.rows()).map(|i| m[(i, i)]).collect(),
            LinearMap::Diagonal(d) => d.data().to_vec(),
        }
    }
}

/// Estimated decomposition together with its summary statistics.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub g: TensorImage,
    /// Standard error of each pixel of `g`.
    pub g_se: TensorImage,
    pub linear: LinearMap,
    /// `E||e||^2 / m`, the per-pixel residual variance.
    pub eps2_per_pixel: Real,
    /// Per-pixel variance of the denoiser output, for scale comparisons.
    pub output_variance_per_pixel: Real,
    pub sample_count: usize,
    pub residual_samples: Option<Vec<TensorImage>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub eps2_per_pixel: Real,
    pub output_variance_per_pixel: Real,
    pub sample_count: usize,
    pub mode: FitMode,
    pub g_se_max: Real,
}

impl Decomposition {
    pub fn report(&self) -> DecompositionReport {
        DecompositionReport {
            eps2_per_pixel: self.eps2_per_pixel,
            output_variance_per_pixel: self.output_variance_per_pixel,
            sample_count: self.sample_count,
            mode: match self.linear {
                LinearMap::Full(_) => FitMode::Full,
                LinearMap::Diagonal(_) => FitMode::Diagonal,
            },
            g_se_max: self.g_se.max_value(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub samples: usize,
    pub alpha: Real,
    pub mode: FitMode,
    pub ridge: Real,
    pub threads: usize,
    pub keep_residual_samples: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            samples: 2000,
            alpha: 0.0,
            mode: FitMode::Diagonal,
            ridge: 1e-8,
            threads: 1,
            keep_residual_samples: false,
        }
    }
}

const BLOCK: usize = 64;

/// Draws `(y_hat, n_hat)` for sample `idx` of the run keyed by `rng`'s
/// stream. `alpha == 0` means no auxiliary vector. Exposed so callers can
/// regenerate the exact realizations a decomposition consumed.
pub fn draw_realization(
    spec: &NoiseSpec,
    x: &TensorImage,
    alpha: Real,
    rng: &SeededRng,
    idx: usize,
) -> Result<(TensorImage, TensorImage)> {
    draw_nhat(spec, x, alpha, rng, idx)
}

fn draw_nhat(
    spec: &NoiseSpec,
    x: &TensorImage,
    alpha: Real,
    rng: &SeededRng,
    idx: usize,
) -> Result<(TensorImage, TensorImage)> {
    let base = stream_label("decomposition.draw")
        .wrapping_add(rng.stream().wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut r = rng.substream(base.wrapping_add(idx as u64 + 1));
    let n = sample_noise(spec, x, &mut r)?;
    let n_hat = if alpha == 0.0 {
        n
    } else {
        let y = x.add(&n)?;
        let z = sample_auxiliary(spec, &y, &mut r)?;
        n.zip_with(&z, |nv, zv| nv + alpha * zv)?
    };
    let y_hat = x.add(&n_hat)?;
    Ok((y_hat, n_hat))
}

/// Empirical conditional mean of `R(y_hat)` given `x`, with per-pixel
/// standard errors.
pub fn estimate_g(
    denoiser: &dyn Denoiser,
    x: &TensorImage,
    spec: &NoiseSpec,
    alpha: Real,
    samples: usize,
    rng: &SeededRng,
    threads: usize,
) -> Result<(TensorImage, TensorImage)> {
    if samples < 2 {
        return Err(Error::parameter("estimate_g needs at least 2 samples".to_string()));
    }
    let m = x.len();
    let blocks = samples.div_ceil(BLOCK);
    let partials = map_indexed(blocks, threads, |b| -> Result<(Vec<Real>, Vec<Real>)> {
        let mut sum = vec![0.0; m];
        let mut sum_sq = vec![0.0; m];
        let lo = b * BLOCK;
        let hi = ((b + 1) * BLOCK).min(samples);
        for idx in lo..hi {
            let (y_hat, _) = draw_nhat(spec, x, alpha, rng, idx)?;
            let out = denoiser.restore(&y_hat)?;
            for (i, &v) in out.data().iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
        Ok((sum, sum_sq))
    });
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; m];
    for p in partials {
        let (s, q) = p?;
        for i in 0..m {
            sum[i] += s[i];
            sum_sq[i] += q[i];
        }
    }
    let n = samples as Real;
    let g = Tensor::from_vec(x.shape(), sum.iter().map(|s| s / n).collect())?;
    let se = Tensor::from_vec(
        x.shape(),
        sum.iter()
            .zip(&sum_sq)
            .map(|(s, q)| {
                let mean = s / n;
                let var = ((q - n * mean * mean) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            })
            .collect(),
    )?;
    Ok((g, se))
}

/// Least-squares fit of `R(y_hat) - g` onto `n_hat` over fresh realizations
/// drawn from the same substreams as [`estimate_g`].
#[allow(clippy::too_many_arguments)]
pub fn fit_linear_map(
    denoiser: &dyn Denoiser,
    x: &TensorImage,
    g: &TensorImage,
    spec: &NoiseSpec,
    alpha: Real,
    samples: usize,
    rng: &SeededRng,
    mode: FitMode,
    ridge: Real,
    threads: usize,
) -> Result<LinearMap> {
    let m = x.len();
    match mode {
        FitMode::Full => {
            check_full_mode(m, samples)?;
            let (_, lin, _, _, _) =
                full_fit(denoiser, x, g, spec, alpha, samples, rng, ridge, false)?;
            Ok(lin)
        }
        FitMode::Diagonal => {
            let sums = diagonal_sums(denoiser, x, g, spec, alpha, samples, rng, threads)?;
            let fit = solve_diagonal(&sums, samples, ridge);
            Ok(LinearMap::Diagonal(Tensor::from_vec(x.shape(), fit.slope)?))
        }
    }
}

fn check_full_mode(m: usize, samples: usize) -> Result<()> {
    if m > 4096 {
        return Err(Error::contract(format!(
            "full-mode fit limited to m <= 4096 pixels, got {m}; use diagonal mode"
        )));
    }
    if samples < 2 * m {
        return Err(Error::contract(format!(
            "full-mode fit is underdetermined: {samples} samples for {m} pixels \
             (need >= 2m); use diagonal mode or raise the sample count"
        )));
    }
    Ok(())
}

struct DiagonalSums {
    n_sum: Vec<Real>,
    r_sum: Vec<Real>,
    nn: Vec<Real>,
    rn: Vec<Real>,
    rr: Vec<Real>,
    out_sum: Vec<Real>,
    out_sum_sq: Vec<Real>,
}

impl DiagonalSums {
    fn zeros(m: usize) -> Self {
        DiagonalSums {
            n_sum: vec![0.0; m],
            r_sum: vec![0.0; m],
            nn: vec![0.0; m],
            rn: vec![0.0; m],
            rr: vec![0.0; m],
            out_sum: vec![0.0; m],
            out_sum_sq: vec![0.0; m],
        }
    }

    fn merge(&mut self, other: &DiagonalSums) {
        for i in 0..self.nn.len() {
            self.n_sum[i] += other.n_sum[i];
            self.r_sum[i] += other.r_sum[i];
            self.nn[i] += other.nn[i];
            self.rn[i] += other.rn[i];
            self.rr[i] += other.rr[i];
            self.out_sum[i] += other.out_sum[i];
            self.out_sum_sq[i] += other.out_sum_sq[i];
        }
    }
}

/// Centered per-pixel regression of `r` on `n_hat`: slope, intercept and
/// mean residual square. The intercept absorbs the finite-sample error of
/// the estimated conditional mean, so exactly linear denoisers collapse to
/// float-rounding residuals.
struct DiagonalFit {
    slope: Vec<Real>,
    intercept: Vec<Real>,
    eps2_per_pixel: Real,
}

fn solve_diagonal(sums: &DiagonalSums, samples: usize, ridge: Real) -> DiagonalFit {
    let m = sums.nn.len();
    let n = samples as Real;
    let mut slope = vec![0.0; m];
    let mut intercept = vec![0.0; m];
    let mut eps2_sum = 0.0;
    for i in 0..m {
        let n_mean = sums.n_sum[i] / n;
        let r_mean = sums.r_sum[i] / n;
        let snn = (sums.nn[i] - n * n_mean * n_mean).max(0.0);
        let srn = sums.rn[i] - n * r_mean * n_mean;
        let srr = (sums.rr[i] - n * r_mean * r_mean).max(0.0);
        let l = srn / (snn + ridge);
        slope[i] = l;
        intercept[i] = r_mean - l * n_mean;
        eps2_sum += (srr - 2.0 * l * srn + l * l * snn).max(0.0);
    }
    DiagonalFit {
        slope,
        intercept,
        eps2_per_pixel: eps2_sum / (n * m as Real),
    }
}

#[allow(clippy::too_many_arguments)]
fn diagonal_sums(
    denoiser: &dyn Denoiser,
    x: &TensorImage,
    g: &TensorImage,
    spec: &NoiseSpec,
    alpha: Real,
    samples: usize,
    rng: &SeededRng,
    threads: usize,
) -> Result<DiagonalSums> {
    let m = x.len();
    let blocks = samples.div_ceil(BLOCK);
    let partials = map_indexed(blocks, threads, |b| -> Result<DiagonalSums> {
        let mut sums = DiagonalSums::zeros(m);
        let lo = b * BLOCK;
        let hi = ((b + 1) * BLOCK).min(samples);
        for idx in lo..hi {
            let (y_hat, n_hat) = draw_nhat(spec, x, alpha, rng, idx)?;
            let out = denoiser.restore(&y_hat)?;
            for i in 0..m {
                let r = out.data()[i] - g.data()[i];
                let nh = n_hat.data()[i];
                sums.n_sum[i] += nh;
                sums.r_sum[i] += r;
                sums.nn[i] += nh * nh;
                sums.rn[i] += r * nh;
                sums.rr[i] += r * r;
                sums.out_sum[i] += out.data()[i];
                sums.out_sum_sq[i] += out.data()[i] * out.data()[i];
            }
        }
        Ok(sums)
    });
    let mut total = DiagonalSums::zeros(m);
    for p in partials {
        total.merge(&p?);
    }
    Ok(total)
}

/// Dense fit with a per-pixel intercept: the regression runs on centered
/// variables and the intercept folds into the conditional-mean estimate.
/// Sample storage is bounded by the full-mode guards.
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn full_fit(
    denoiser: &dyn Denoiser,
    x: &TensorImage,
    g: &TensorImage,
    spec: &NoiseSpec,
    alpha: Real,
    samples: usize,
    rng: &SeededRng,
    ridge: Real,
    keep_residuals: bool,
) -> Result<(
    Vec<TensorImage>, // optionally retained residuals
    LinearMap,
    Vec<Real>, // intercept (fold into g)
    Real,      // eps2 per pixel
    Real,      // output variance per pixel
)> {
    let m = x.len();
    if samples * m > 40_000_000 {
        return Err(Error::parameter(format!(
            "full-mode fit would store {samples} x {m} values; reduce samples or use diagonal mode"
        )));
    }
    let mut rows = Vec::with_capacity(samples);
    let mut out_sum = vec![0.0; m];
    let mut out_sum_sq = vec![0.0; m];
    let mut n_mean = vec![0.0; m];
    let mut r_mean = vec![0.0; m];
    for idx in 0..samples {
        let (y_hat, n_hat) = draw_nhat(spec, x, alpha, rng, idx)?;
        let out = denoiser.restore(&y_hat)?;
        let r: Vec<Real> = out
            .data()
            .iter()
            .zip(g.data())
            .map(|(o, gv)| o - gv)
            .collect();
        for i in 0..m {
            out_sum[i] += out.data()[i];
            out_sum_sq[i] += out.data()[i] * out.data()[i];
            n_mean[i] += n_hat.data()[i];
            r_mean[i] += r[i];
        }
        rows.push((n_hat.into_data(), r));
    }
    let nf = samples as Real;
    n_mean.iter_mut().for_each(|v| *v /= nf);
    r_mean.iter_mut().for_each(|v| *v /= nf);
    // center in place
    for (nh, r) in rows.iter_mut() {
        for i in 0..m {
            nh[i] -= n_mean[i];
            r[i] -= r_mean[i];
        }
    }

    let mut gram = Matrix::zeros(m, m);
    let mut cross = Matrix::zeros(m, m);
    for (nh, r) in &rows {
        for i in 0..m {
            let ni = nh[i];
            if ni != 0.0 {
                let row = gram.row_mut(i);
                for (j, &nj) in nh.iter().enumerate() {
                    row[j] += ni * nj;
                }
            }
            let ri = r[i];
            if ri != 0.0 {
                let row = cross.row_mut(i);
                for (j, &nj) in nh.iter().enumerate() {
                    row[j] += ri * nj;
                }
            }
        }
    }
    gram.add_diagonal(ridge);
    let chol = Cholesky::new(&gram).map_err(|e| {
        Error::contract(format!("full-mode normal equations not solvable: {e}; use diagonal mode"))
    })?;
    // L G = C  =>  G L^T = C^T; solve column-wise.
    let l_t = chol.solve_matrix(&cross.transpose());
    let l = l_t.transpose();

    let mut eps2_sum = 0.0;
    let mut residuals = Vec::new();
    for (nh, r) in &rows {
        let ln = l.matvec(nh)?;
        let e: Vec<Real> = r.iter().zip(&ln).map(|(rv, lv)| rv - lv).collect();
        eps2_sum += e.iter().map(|v| v * v).sum::<Real>();
        if keep_residuals {
            residuals.push(Tensor::from_vec(x.shape(), e)?);
        }
    }
    let l_nmean = l.matvec(&n_mean)?;
    let intercept: Vec<Real> = r_mean
        .iter()
        .zip(&l_nmean)
        .map(|(rm, ln)| rm - ln)
        .collect();
    let eps2_per_pixel = eps2_sum / (nf * m as Real);
    let out_var = out_var_per_pixel(&out_sum, &out_sum_sq, samples);
    Ok((
        residuals,
        LinearMap::Full(l),
        intercept,
        eps2_per_pixel,
        out_var,
    ))
}

fn out_var_per_pixel(sum: &[Real], sum_sq: &[Real], samples: usize) -> Real {
    let n = samples as Real;
    let m = sum.len() as Real;
    sum.iter()
        .zip(sum_sq)
        .map(|(s, q)| ((q - s * s / n) / (n - 1.0)).max(0.0))
        .sum::<Real>()
        / m
}

/// Full decomposition: conditional mean, linear map, residual statistics.
pub fn residual_stats(
    denoiser: &dyn Denoiser,
    x: &TensorImage,
    spec: &NoiseSpec,
    opts: &McOptions,
    rng: &SeededRng,
) -> Result<Decomposition> {
    let (g, g_se) = estimate_g(denoiser, x, spec, opts.alpha, opts.samples, rng, opts.threads)?;
    match opts.mode {
        FitMode::Full => {
            check_full_mode(x.len(), opts.samples)?;
            let (residuals, linear, intercept, eps2, out_var) = full_fit(
                denoiser,
                x,
                &g,
                spec,
                opts.alpha,
                opts.samples,
                rng,
                opts.ridge,
                opts.keep_residual_samples,
            )?;
            let g = Tensor::from_vec(
                x.shape(),
                g.data()
                    .iter()
                    .zip(&intercept)
                    .map(|(gv, b)| gv + b)
                    .collect(),
            )?;
            Ok(Decomposition {
                g,
                g_se,
                linear,
                eps2_per_pixel: eps2,
                output_variance_per_pixel: out_var,
                sample_count: opts.samples,
                residual_samples: if opts.keep_residual_samples {
                    Some(residuals)
                } else {
                    None
                },
            })
        }
        FitMode::Diagonal => {
            let sums = diagonal_sums(
                denoiser,
                x,
                &g,
                spec,
                opts.alpha,
                opts.samples,
                rng,
                opts.threads,
            )?;
            let fit = solve_diagonal(&sums, opts.samples, opts.ridge);
            let g = Tensor::from_vec(
                x.shape(),
                g.data()
                    .iter()
                    .zip(&fit.intercept)
                    .map(|(gv, b)| gv + b)
                    .collect(),
            )?;
            let residual_samples = if opts.keep_residual_samples {
                Some(collect_diagonal_residuals(
                    denoiser,
                    x,
                    &g,
                    &fit.slope,
                    spec,
                    opts.alpha,
                    opts.samples,
                    rng,
                )?)
            } else {
                None
            };
            Ok(Decomposition {
                g,
                g_se,
                linear: LinearMap::Diagonal(Tensor::from_vec(x.shape(), fit.slope)?),
                eps2_per_pixel: fit.eps2_per_pixel,
                output_variance_per_pixel: out_var_per_pixel(
                    &sums.out_sum,
                    &sums.out_sum_sq,
                    opts.samples,
                ),
                sample_count: opts.samples,
                residual_samples,
            })
        }
    }
}

/// Residuals against the adjusted conditional mean: `e = R(y_hat) - g - L n_hat`.
#[allow(clippy::too_many_arguments)]
fn collect_diagonal_residuals(
    denoiser: &dyn Denoiser,
    x: &TensorImage,
    g_adjusted: &TensorImage,
    l: &[Real],
    spec: &NoiseSpec,
    alpha: Real,
    samples: usize,
    rng: &SeededRng,
) -> Result<Vec<TensorImage>> {
    let mut out = Vec::with_capacity(samples);
    for idx in 0..samples {
        let (y_hat, n_hat) = draw_nhat(spec, x, alpha, rng, idx)?;
        let o = denoiser.restore(&y_hat)?;
        let e: Vec<Real> = (0..x.len())
            .map(|i| o.data()[i] - g_adjusted.data()[i] - l[i] * n_hat.data()[i])
            .collect();
        out.push(Tensor::from_vec(x.shape(), e)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ZlzReport {
    pub statistic: Real,
    pub se: Real,
    pub sample_count: usize,
}

/// `E<z, Lz> = tr(L Cov(z|x))` for the fitted (diagonal) linear map and the
/// spec's auxiliary covariance at the given clean image.
pub fn zlz_statistic(
    denoiser: &dyn Denoiser,
    x_const: &TensorImage,
    spec: &NoiseSpec,
    alpha: Real,
    samples: usize,
    rng: &SeededRng,
    threads: usize,
) -> Result<ZlzReport> {
    let (g, _) = estimate_g(denoiser, x_const, spec, alpha, samples, rng, threads)?;
    let sums = diagonal_sums(denoiser, x_const, &g, spec, alpha, samples, rng, threads)?;
    let var_z = auxiliary_variance_map(spec, x_const)?;
    let m = x_const.len();
    let n = samples as Real;
    let mut statistic = 0.0;
    let mut se_sq = 0.0;
    for i in 0..m {
        let n_mean = sums.n_sum[i] / n;
        let r_mean = sums.r_sum[i] / n;
        let snn = (sums.nn[i] - n * n_mean * n_mean).max(1e-300);
        let srn = sums.rn[i] - n * r_mean * n_mean;
        let srr = (sums.rr[i] - n * r_mean * r_mean).max(0.0);
        let l = srn / snn;
        let resid = (srr - 2.0 * l * srn + l * l * snn).max(0.0);
        // regression slope variance: residual variance / sum of squares
        let var_l = resid / ((samples.max(3) - 2) as Real) / snn;
        statistic += l * var_z.data()[i];
        se_sq += var_l * var_z.data()[i] * var_z.data()[i];
    }
    Ok(ZlzReport {
        statistic,
        se: se_sq.sqrt(),
        sample_count: samples,
    })
}

/// Pairs `([L n_hat]_i, [R(y_hat) - g]_i)` over realizations at one pixel.
#[derive(Debug, Clone)]
pub struct LinearityScatter {
    pub pixel: usize,
    pub pairs: Vec<(Real, Real)>,
}

impl LinearityScatter {
    pub fn pearson(&self) -> Real {
        let n = self.pairs.len() as Real;
        let mx = self.pairs.iter().map(|p| p.0).sum::<Real>() / n;
        let my = self.pairs.iter().map(|p| p.1).sum::<Real>() / n;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        let mut sxy = 0.0;
        for (x, y) in &self.pairs {
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
            sxy += (x - mx) * (y - my);
        }
        if sxx == 0.0 || syy == 0.0 {
            return 0.0;
        }
        sxy / (sxx * syy).sqrt()
    }

    /// Two-column CSV `(Ln_hat_i, R_minus_g_i)`.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut s = String::from("Ln_hat_i,R_minus_g_i\n");
        for (a, b) in &self.pairs {
            s.push_str(&format!("{a},{b}\n"));
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Collects the linearity scatter at `pixel` using a fitted map.
pub fn export_scatter(
    denoiser: &dyn Denoiser,
    x: &TensorImage,
    pixel: usize,
    spec: &NoiseSpec,
    opts: &McOptions,
    rng: &SeededRng,
) -> Result<LinearityScatter> {
    if pixel >= x.len() {
        return Err(Error::parameter(format!(
            "pixel {pixel} out of range for {} pixels",
            x.len()
        )));
    }
    let dec = residual_stats(denoiser, x, spec, opts, rng)?;
    let mut pairs = Vec::with_capacity(opts.samples);
    for idx in 0..opts.samples {
        let (y_hat, n_hat) = draw_nhat(spec, x, opts.alpha, rng, idx)?;
        let out = denoiser.restore(&y_hat)?;
        let ln = dec.linear.apply(&n_hat)?;
        pairs.push((ln.data()[pixel], out.data()[pixel] - dec.g.data()[pixel]));
    }
    Ok(LinearityScatter { pixel, pairs })
}
