//! PSNR and SSIM.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `10 log10(peak^2 / MSE)` in dB; identical inputs give `+inf`.
pub fn psnr<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, peak: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::parameter("psnr: shape mismatch".to_string()));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_c() - y.to_f64_c();
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Standard single-channel SSIM: 11x11 Gaussian window with sigma 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1.0, averaged over valid windows.
pub fn ssim<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::parameter("ssim: shape mismatch".to_string()));
    }
    let (c, h, w) = a.chw()?;
    if c != 1 {
        return Err(Error::parameter("ssim: single channel only".to_string()));
    }
    const WIN: usize = 11;
    const SIGMA: f64 = 1.5;
    if h < WIN || w < WIN {
        return Err(Error::parameter(format!(
            "ssim: image {h}x{w} smaller than the {WIN}x{WIN} window"
        )));
    }
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);

    // separable Gaussian window, normalized to sum 1
    let mut g = [0.0f64; WIN];
    let mid = (WIN / 2) as f64;
    let mut norm = 0.0;
    for (i, gi) in g.iter_mut().enumerate() {
        *gi = (-((i as f64 - mid).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
        norm += *gi;
    }
    for gi in g.iter_mut() {
        *gi /= norm;
    }

    let pix = |t: &Tensor<S>, y: usize, x: usize| t.at(0, y, x).to_f64_c();
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=(h - WIN) {
        for wx in 0..=(w - WIN) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for dy in 0..WIN {
                for dx in 0..WIN {
                    let wgt = g[dy] * g[dx];
                    let va = pix(a, wy + dy, wx + dx);
                    let vb = pix(b, wy + dy, wx + dx);
                    mu_a += wgt * va;
                    mu_b += wgt * vb;
                    aa += wgt * va * va;
                    bb += wgt * vb * vb;
                    ab += wgt * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_samples, SeededRng};

    #[test]
    fn psnr_known_value() {
        // MSE = 0.01 at peak 1 -> 20 dB
        let a = Tensor::<f64>::full(&[1, 4, 4], 0.5);
        let b = Tensor::full(&[1, 4, 4], 0.6);
        let v = psnr(&a, &b, 1.0).unwrap();
        assert!((v - 20.0).abs() < 1e-10);
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = Tensor::<f64>::full(&[1, 4, 4], 0.3);
        assert!(psnr(&a, &a, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn psnr_scale_homogeneity() {
        let mut rng = SeededRng::new(2);
        let a: Tensor<f64> = gaussian_samples(&mut rng, &[1, 8, 8], 0.5, 0.1).unwrap();
        let b: Tensor<f64> = gaussian_samples(&mut rng, &[1, 8, 8], 0.5, 0.1).unwrap();
        let p1 = psnr(&a, &b, 1.0).unwrap();
        let p2 = psnr(&a.scale(0.5), &b.scale(0.5), 0.5).unwrap();
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = SeededRng::new(3);
        let a: Tensor<f64> = gaussian_samples(&mut rng, &[1, 16, 16], 0.5, 0.2).unwrap();
        let s = ssim(&a, &a).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "ssim {s}");
    }

    #[test]
    fn ssim_luminance_shift_below_one() {
        let a = Tensor::<f64>::full(&[1, 16, 16], 0.2);
        let b = Tensor::full(&[1, 16, 16], 0.9);
        let s = ssim(&a, &b).unwrap();
        assert!(s < 1.0, "ssim {s}");
    }

    #[test]
    fn ssim_anticorrelated_can_go_negative() {
        // zero-mean anti-correlated checkerboards around 0.5
        let a = Tensor::<f64>::from_fn(&[1, 16, 16], |i| {
            let (y, x) = (i / 16, i % 16);
            0.5 + if (y + x) % 2 == 0 { 0.3 } else { -0.3 }
        });
        let b = a.map(|v| 1.0 - v);
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.0, "ssim {s}");
    }
}
