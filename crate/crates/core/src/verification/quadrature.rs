//! Adaptive Simpson quadrature and the closed-loop oracles built on it:
//! Gaussian moments of the rectifier and the truncated-prior Poisson
//! posterior mean.

use crate::error::{Error, Result};
use crate::Real;

/// Adaptive Simpson over 32 uniform panels. The panelling pins the
/// tolerance to a sound global scale even for sharply peaked integrands,
/// and a shared evaluation budget bounds the worst case.
pub fn integrate(f: &impl Fn(Real) -> Real, a: Real, b: Real, rel_tol: Real) -> Real {
    if a == b {
        return 0.0;
    }
    const PANELS: usize = 32;
    let h = (b - a) / PANELS as Real;
    let mut panels = Vec::with_capacity(PANELS);
    let mut scale = 0.0;
    let mut f_left = f(a);
    for i in 0..PANELS {
        let x0 = a + i as Real * h;
        let x1 = if i + 1 == PANELS { b } else { x0 + h };
        let xm = 0.5 * (x0 + x1);
        let fm = f(xm);
        let f_right = f(x1);
        let coarse = simpson(x0, x1, f_left, fm, f_right);
        scale += coarse.abs();
        panels.push((x0, x1, f_left, fm, f_right, coarse));
        f_left = f_right;
    }
    let tol = rel_tol * scale.max(1e-300) / PANELS as Real;
    let mut budget = 400_000usize;
    panels
        .into_iter()
        .map(|(x0, x1, fa, fm, fb, coarse)| {
            adaptive(f, x0, x1, fa, fm, fb, coarse, tol, 45, &mut budget)
        })
        .sum()
}

fn simpson(a: Real, b: Real, fa: Real, fm: Real, fb: Real) -> Real {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &impl Fn(Real) -> Real,
    a: Real,
    b: Real,
    fa: Real,
    fm: Real,
    fb: Real,
    whole: Real,
    tol: Real,
    depth: usize,
    budget: &mut usize,
) -> Real {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let refined = left + right;
    *budget = budget.saturating_sub(2);
    if depth == 0 || *budget == 0 || (refined - whole).abs() <= 15.0 * tol {
        return refined + (refined - whole) / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, budget)
        + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, budget)
}

/// Moments of the rectified Gaussian `max(0, T)`, `T ~ N(0, sigma^2)`, by
/// quadrature over the density (not the closed forms, which unit tests use
/// as the cross-check).
pub struct RectifierOracle {
    pub sigma: Real,
}

impl RectifierOracle {
    pub fn new(sigma: Real) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(Error::parameter("rectifier oracle needs sigma > 0".to_string()));
        }
        Ok(RectifierOracle { sigma })
    }

    fn pdf(&self, t: Real) -> Real {
        let s = self.sigma;
        (-(t * t) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    }

    fn expect(&self, g: impl Fn(Real) -> Real) -> Real {
        let lim = 12.0 * self.sigma;
        // split at the kink of the rectifier
        let f = |t: Real| g(t) * self.pdf(t);
        integrate(&f, -lim, 0.0, 1e-12) + integrate(&f, 0.0, lim, 1e-12)
    }

    /// `E[max(0, T)]`.
    pub fn mean(&self) -> Real {
        self.expect(|t| t.max(0.0))
    }

    /// Optimal per-pixel linear coefficient `Cov(max(0,T), T) / Var(T)`.
    pub fn linear_coeff(&self) -> Real {
        self.expect(|t| t.max(0.0) * t) / (self.sigma * self.sigma)
    }

    /// Residual variance of the decomposition `max(0,T) = g + l T + e`.
    pub fn residual_variance(&self) -> Real {
        let g = self.mean();
        let l = self.linear_coeff();
        self.expect(move |t| {
            let e = t.max(0.0) - g - l * t;
            e * e
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomial_exactly() {
        let v = integrate(&|x| 3.0 * x * x, 0.0, 2.0, 1e-12);
        assert!((v - 8.0).abs() < 1e-10);
    }

    #[test]
    fn rectifier_moments_match_closed_forms() {
        // E[max(0,T)] = sigma/sqrt(2 pi); l = 1/2;
        // residual variance = sigma^2 (1/4 - 1/(2 pi)).
        let sigma = 0.37;
        let o = RectifierOracle::new(sigma).unwrap();
        let want_mean = sigma / (2.0 * std::f64::consts::PI).sqrt();
        assert!((o.mean() - want_mean).abs() < 1e-9);
        assert!((o.linear_coeff() - 0.5).abs() < 1e-9);
        let want_resid = sigma * sigma * (0.25 - 1.0 / (2.0 * std::f64::consts::PI));
        assert!((o.residual_variance() - want_resid).abs() < 1e-9 * want_resid.max(1.0));
    }
}
