//! Adam with bias correction, a piecewise-constant learning-rate schedule,
//! and the central finite-difference gradient oracle.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub step: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Tensor<S>], lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One Adam update. Rejects non-finite gradients so the caller can fall
    /// back to its last good checkpoint.
    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::parameter("adam: parameter/gradient count mismatch".to_string()));
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient of parameter {i}"),
                    step: self.step,
                });
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let b1 = S::from_f64_c(self.beta1);
        let b2 = S::from_f64_c(self.beta2);
        let one = S::one();
        let corr1 = S::from_f64_c(1.0 - self.beta1.powf(t));
        let corr2 = S::from_f64_c(1.0 - self.beta2.powf(t));
        let lr = S::from_f64_c(self.lr);
        let eps = S::from_f64_c(self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / corr1;
                let vhat = *vv / corr2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Learning rate from a piecewise-constant schedule `(start_step, lr)`,
/// strictly increasing in step.
pub fn schedule_lr(schedule: &[(usize, f64)], step: usize) -> f64 {
    let mut lr = schedule.first().map_or(1e-3, |&(_, lr)| lr);
    for &(s, l) in schedule {
        if step >= s {
            lr = l;
        }
    }
    lr
}

/// Central finite differences with per-element step `h_base * max(1, |w|)`.
/// `loss_fn` must be pure and deterministic.
pub fn finite_diff_gradient<S: Scalar>(
    mut loss_fn: impl FnMut(&[Tensor<S>]) -> Result<S>,
    params: &[Tensor<S>],
    h_base: f64,
) -> Result<Vec<Tensor<S>>> {
    let mut work: Vec<Tensor<S>> = params.to_vec();
    let mut grads: Vec<Tensor<S>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let w = params[pi].data()[ei].to_f64_c();
            let h = h_base * w.abs().max(1.0);
            work[pi].data_mut()[ei] = S::from_f64_c(w + h);
            let up = loss_fn(&work)?.to_f64_c();
            work[pi].data_mut()[ei] = S::from_f64_c(w - h);
            let down = loss_fn(&work)?.to_f64_c();
            work[pi].data_mut()[ei] = params[pi].data()[ei];
            grads[pi].data_mut()[ei] = S::from_f64_c((up - down) / (2.0 * h));
        }
    }
    Ok(grads)
}

/// Worst elementwise relative error between analytic and finite-difference
/// gradients, ignoring entries where both are below `floor`.
pub fn max_relative_error<S: Scalar>(
    analytic: &[Tensor<S>],
    numeric: &[Tensor<S>],
    floor: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let av = av.to_f64_c();
            let nv = nv.to_f64_c();
            if av.abs() <= floor && nv.abs() <= floor {
                continue;
            }
            let rel = (av - nv).abs() / av.abs().max(nv.abs());
            worst = worst.max(rel);
        }
    }
    worst
}
