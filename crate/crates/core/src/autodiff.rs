//! Minimal reverse-mode automatic differentiation over tensors.
//!
//! The tape is a flat arena of eagerly-evaluated nodes; construction order is
//! topological, so the backward pass is a single reverse sweep. Handles are
//! plain indices ([`ValueId`]), which keeps the graph free of interior
//! mutability and makes per-sample tapes cheap to build and drop.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op<S> {
    /// Constant or trainable leaf; `trainable` decides whether a gradient
    /// buffer is materialized for it.
    Leaf { trainable: bool },
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    /// Elementwise product.
    Mul(ValueId, ValueId),
    /// `scale * input`.
    Scale(ValueId, S),
    Relu(ValueId),
    /// Zero-padded stride-1 2-D convolution: input `(ci,h,w)`, weight
    /// `(co,ci,k,k)` with odd `k`, bias `(co)`, output `(co,h,w)`.
    Conv2d {
        input: ValueId,
        weight: ValueId,
        bias: ValueId,
    },
    /// Sum of squares over all elements, divided by `divisor`; scalar output.
    SumSqScaled(ValueId, S),
    /// Identity value, no gradient flow.
    StopGradient,
}

struct Node<S> {
    value: Tensor<S>,
    grad: Option<Tensor<S>>,
    op: Op<S>,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> ValueId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        ValueId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: ValueId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: ValueId) -> Result<S> {
        let t = self.value(id);
        if t.len() != 1 {
            return Err(Error::contract(format!(
                "expected scalar node, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t.data()[0])
    }

    /// Gradient of the last `backward` target with respect to `id`. Zero
    /// tensor if the node was never reached.
    pub fn gradient(&self, id: ValueId) -> Tensor<S> {
        match &self.nodes[id.0].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[id.0].value.shape()),
        }
    }

    pub fn constant(&mut self, value: Tensor<S>) -> ValueId {
        self.push(value, Op::Leaf { trainable: false })
    }

    pub fn parameter(&mut self, value: Tensor<S>) -> ValueId {
        self.push(value, Op::Leaf { trainable: true })
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).mul_elem(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: ValueId, s: S) -> ValueId {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).map(|v| v.max(S::zero()));
        self.push(value, Op::Relu(a))
    }

    pub fn stop_gradient(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).clone();
        self.push(value, Op::StopGradient)
    }

    /// `sum(x^2) / divisor` as a scalar node. With `divisor = len` this is
    /// the per-pixel mean of squares.
    pub fn sum_sq_scaled(&mut self, a: ValueId, divisor: S) -> Result<ValueId> {
        if divisor == S::zero() {
            return Err(Error::parameter("sum_sq divisor must be nonzero".to_string()));
        }
        let v = self.value(a).sum_sq() / divisor;
        Ok(self.push(Tensor::from_vec(&[1], vec![v])?, Op::SumSqScaled(a, divisor)))
    }

    pub fn mean_sq(&mut self, a: ValueId) -> Result<ValueId> {
        let n = S::from_usize(self.value(a).len()).unwrap();
        self.sum_sq_scaled(a, n)
    }

    pub fn conv2d(&mut self, input: ValueId, weight: ValueId, bias: ValueId) -> Result<ValueId> {
        let value = conv2d_forward(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Reverse sweep from a scalar node. Gradients accumulate into every
    /// reachable node; leaves marked trainable can then be read back.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for node in self.nodes.iter_mut() {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::from_vec(&[1], vec![S::one()])?);

        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            // Reinstall before dispatch so callers can read interior grads.
            self.nodes[i].grad = Some(grad.clone());
            match self.nodes[i].op.clone() {
                Op::Leaf { .. } => {}
                Op::Add(a, b) => {
                    self.accumulate(a, &grad)?;
                    self.accumulate(b, &grad)?;
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, &grad)?;
                    let neg = grad.scale(-S::one());
                    self.accumulate(b, &neg)?;
                }
                Op::Mul(a, b) => {
                    let ga = grad.mul_elem(self.value(b))?;
                    let gb = grad.mul_elem(self.value(a))?;
                    self.accumulate(a, &ga)?;
                    self.accumulate(b, &gb)?;
                }
                Op::Scale(a, s) => {
                    let ga = grad.scale(s);
                    self.accumulate(a, &ga)?;
                }
                Op::Relu(a) => {
                    // Subgradient 0 at the kink.
                    let ga = grad.zip_with(self.value(a), |g, x| {
                        if x > S::zero() {
                            g
                        } else {
                            S::zero()
                        }
                    })?;
                    self.accumulate(a, &ga)?;
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                } => {
                    let input_needs_grad = self.needs_grad(input);
                    let (gi, gw, gb) = conv2d_backward(
                        self.value(input),
                        self.value(weight),
                        &grad,
                        input_needs_grad,
                    )?;
                    if let Some(gi) = gi {
                        self.accumulate(input, &gi)?;
                    }
                    self.accumulate(weight, &gw)?;
                    self.accumulate(bias, &gb)?;
                }
                Op::SumSqScaled(a, divisor) => {
                    let g = grad.data()[0];
                    let two = S::from_f64_c(2.0);
                    let ga = self.value(a).scale(two * g / divisor);
                    self.accumulate(a, &ga)?;
                }
                Op::StopGradient => {}
            }
        }
        Ok(())
    }

    /// Constant leaves and stop-gradient nodes never need a gradient buffer.
    fn needs_grad(&self, id: ValueId) -> bool {
        !matches!(
            self.nodes[id.0].op,
            Op::Leaf { trainable: false } | Op::StopGradient
        )
    }

    fn accumulate(&mut self, id: ValueId, grad: &Tensor<S>) -> Result<()> {
        if !self.needs_grad(id) {
            return Ok(());
        }
        match &mut self.nodes[id.0].grad {
            Some(g) => g.add_assign(grad),
            slot @ None => {
                *slot = Some(grad.clone());
                Ok(())
            }
        }
    }
}

/// Zero-padded stride-1 convolution. The inner loops run over contiguous
/// rows so they vectorize; this is the hottest kernel in the crate.
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (ci, h, w) = input.chw()?;
    let ws = weight.shape();
    if ws.len() != 4 || ws[1] != ci {
        return Err(Error::parameter(format!(
            "conv2d: weight {ws:?} incompatible with input channels {ci}"
        )));
    }
    let (co, k) = (ws[0], ws[2]);
    if ws[3] != k || k % 2 == 0 {
        return Err(Error::parameter(format!("conv2d: kernel must be square and odd, got {ws:?}")));
    }
    if bias.shape() != [co] {
        return Err(Error::parameter("conv2d: bias shape mismatch".to_string()));
    }
    if h < k || w < k {
        return Err(Error::parameter(format!(
            "conv2d: image {h}x{w} smaller than kernel {k}x{k}"
        )));
    }
    let pad = k / 2;
    let mut out = Tensor::zeros(&[co, h, w]);
    let idata = input.data();
    let wdata = weight.data();
    let odata = out.data_mut();
    for oc in 0..co {
        let obase = oc * h * w;
        let b = bias.data()[oc];
        odata[obase..obase + h * w].iter_mut().for_each(|v| *v = b);
        for ic in 0..ci {
            let ibase = ic * h * w;
            if k == 3 {
                conv3_accumulate(
                    &idata[ibase..ibase + h * w],
                    &wdata[(oc * ci + ic) * 9..(oc * ci + ic) * 9 + 9],
                    &mut odata[obase..obase + h * w],
                    h,
                    w,
                );
                continue;
            }
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wdata[((oc * ci + ic) * k + ky) * k + kx];
                    if wv == S::zero() {
                        continue;
                    }
                    let dy = ky as isize - pad as isize;
                    let dx = kx as isize - pad as isize;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    // output x in [x0, x1) reads source x + dx, i.e. the
                    // contiguous span starting at x0 + dx >= 0.
                    let sx0 = (x0 as isize + dx) as usize;
                    for y in y0..y1 {
                        let src_row = ibase + ((y as isize + dy) as usize) * w;
                        let dst_row = obase + y * w;
                        let src = &idata[src_row + sx0..src_row + sx0 + (x1 - x0)];
                        let dst = &mut odata[dst_row + x0..dst_row + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = *d + wv * *s;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Row-fused 3x3 accumulation: one pass per kernel row instead of one per
/// tap. Borders fall back to the truncated taps.
fn conv3_accumulate<S: Scalar>(input: &[S], w: &[S], out: &mut [S], h: usize, w_len: usize) {
    for (ky, wrow) in w.chunks_exact(3).enumerate() {
        let (w0, w1, w2) = (wrow[0], wrow[1], wrow[2]);
        if w0 == S::zero() && w1 == S::zero() && w2 == S::zero() {
            continue;
        }
        for y in 0..h {
            let sy = y as isize + ky as isize - 1;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let src = &input[(sy as usize) * w_len..(sy as usize + 1) * w_len];
            let dst = &mut out[y * w_len..(y + 1) * w_len];
            if w_len == 1 {
                dst[0] = dst[0] + w1 * src[0];
                continue;
            }
            dst[0] = dst[0] + w1 * src[0] + w2 * src[1];
            let last = w_len - 1;
            // interior: dst[x] += w0*src[x-1] + w1*src[x] + w2*src[x+1]
            let (dst_mid, src_a, src_b, src_c) = (
                &mut dst[1..last],
                &src[0..last - 1],
                &src[1..last],
                &src[2..],
            );
            for ((d, &a), (&b, &c)) in dst_mid
                .iter_mut()
                .zip(src_a)
                .zip(src_b.iter().zip(src_c))
            {
                *d = *d + w0 * a + w1 * b + w2 * c;
            }
            dst[last] = dst[last] + w0 * src[last - 1] + w1 * src[last];
        }
    }
}

/// Gradients of the convolution with respect to input (optional), weight
/// and bias.
fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    gout: &Tensor<S>,
    input_needs_grad: bool,
) -> Result<(Option<Tensor<S>>, Tensor<S>, Tensor<S>)> {
    let (ci, h, w) = input.chw()?;
    let ws = weight.shape();
    let (co, k) = (ws[0], ws[2]);
    let pad = k / 2;

    let mut ginput = if input_needs_grad {
        Some(Tensor::zeros(&[ci, h, w]))
    } else {
        None
    };
    let mut gweight = Tensor::zeros(ws);
    let mut gbias = Tensor::zeros(&[co]);

    let idata = input.data();
    let wdata = weight.data();
    let gdata = gout.data();

    for oc in 0..co {
        let obase = oc * h * w;
        gbias.data_mut()[oc] = gdata[obase..obase + h * w].iter().copied().sum();
        for ic in 0..ci {
            let ibase = ic * h * w;
            if k == 3 {
                let wbase = (oc * ci + ic) * 9;
                let g_plane = &gdata[obase..obase + h * w];
                let in_plane = &idata[ibase..ibase + h * w];
                conv3_weight_grads(
                    g_plane,
                    in_plane,
                    &mut gweight.data_mut()[wbase..wbase + 9],
                    h,
                    w,
                );
                if let Some(gi) = ginput.as_mut() {
                    // input gradient of a same-padded conv is the conv of
                    // the output gradient with the flipped kernel
                    let mut flipped = [S::zero(); 9];
                    for i in 0..9 {
                        flipped[i] = wdata[wbase + 8 - i];
                    }
                    conv3_accumulate(
                        g_plane,
                        &flipped,
                        &mut gi.data_mut()[ibase..ibase + h * w],
                        h,
                        w,
                    );
                }
                continue;
            }
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((oc * ci + ic) * k + ky) * k + kx;
                    let wv = wdata[widx];
                    let dy = ky as isize - pad as isize;
                    let dx = kx as isize - pad as isize;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let mut wgrad = S::zero();
                    for y in y0..y1 {
                        let src_row = ibase + ((y as isize + dy) as usize) * w;
                        let g_row = obase + y * w;
                        let src_off = src_row + sx0;
                        let grads = &gdata[g_row + x0..g_row + x1];
                        let inputs = &idata[src_off..src_off + (x1 - x0)];
                        for (g, s) in grads.iter().zip(inputs) {
                            wgrad = wgrad + *g * *s;
                        }
                        if let Some(gi) = ginput.as_mut() {
                            let gi = &mut gi.data_mut()[src_off..src_off + (x1 - x0)];
                            for (t, g) in gi.iter_mut().zip(grads) {
                                *t = *t + wv * *g;
                            }
                        }
                    }
                    gweight.data_mut()[widx] = gweight.data()[widx] + wgrad;
                }
            }
        }
    }
    Ok((ginput, gweight, gbias))
}

/// All nine 3x3 weight gradients as shifted row dot products.
fn conv3_weight_grads<S: Scalar>(
    g_plane: &[S],
    in_plane: &[S],
    wgrad: &mut [S],
    h: usize,
    w: usize,
) {
    for ky in 0..3usize {
        let mut acc = [S::zero(); 3];
        for y in 0..h {
            let sy = y as isize + ky as isize - 1;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let g_row = &g_plane[y * w..(y + 1) * w];
            let in_row = &in_plane[(sy as usize) * w..(sy as usize + 1) * w];
            if w == 1 {
                acc[1] = acc[1] + g_row[0] * in_row[0];
                continue;
            }
            // kx = 0 reads in[x-1], kx = 2 reads in[x+1]
            let mut d0 = S::zero();
            for (g, s) in g_row[1..].iter().zip(&in_row[..w - 1]) {
                d0 = d0 + *g * *s;
            }
            let mut d1 = S::zero();
            for (g, s) in g_row.iter().zip(in_row) {
                d1 = d1 + *g * *s;
            }
            let mut d2 = S::zero();
            for (g, s) in g_row[..w - 1].iter().zip(&in_row[1..]) {
                d2 = d2 + *g * *s;
            }
            acc[0] = acc[0] + d0;
            acc[1] = acc[1] + d1;
            acc[2] = acc[2] + d2;
        }
        for kx in 0..3 {
            wgrad[ky * 3 + kx] = wgrad[ky * 3 + kx] + acc[kx];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_loss_gradient() {
        // loss = w^2 at w = 3 -> dloss/dw = 6
        let mut tape: Tape<f64> = Tape::new();
        let w = tape.parameter(Tensor::from_vec(&[1], vec![3.0]).unwrap());
        let loss = tape.sum_sq_scaled(w, 1.0).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.gradient(w).data()[0], 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape: Tape<f64> = Tape::new();
        let w = tape.parameter(Tensor::zeros(&[2, 2]));
        assert!(tape.backward(w).is_err());
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut tape: Tape<f64> = Tape::new();
        let w = tape.parameter(Tensor::from_vec(&[1], vec![2.0]).unwrap());
        let detached = tape.stop_gradient(w);
        let prod = tape.mul(w, detached).unwrap(); // w * stop(w) = w^2 as value
        let loss = tape.sum_sq_scaled(prod, 1.0).unwrap();
        tape.backward(loss).unwrap();
        // d/dw (w*c)^2 with c treated constant = 2*w*c^2 = 16, not d/dw w^4 = 32
        assert_eq!(tape.gradient(w).data()[0], 16.0);
    }

    #[test]
    fn relu_clamps_and_masks_gradient() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.parameter(Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap());
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
        let loss = tape.sum_sq_scaled(r, 1.0).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.gradient(x).data(), &[0.0, 4.0]);
    }

    #[test]
    fn conv2d_identity_kernel_preserves_input() {
        let input = Tensor::<f64>::from_fn(&[1, 5, 7], |i| i as f64 * 0.1);
        let mut weight = Tensor::zeros(&[1, 1, 3, 3]);
        weight.data_mut()[4] = 1.0; // center tap
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &weight, &bias).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv2d_matches_naive_reference() {
        let mut rng = crate::rng::SeededRng::new(9);
        let input: Tensor<f64> =
            crate::rng::gaussian_samples(&mut rng, &[2, 6, 5], 0.0, 1.0).unwrap();
        let weight: Tensor<f64> =
            crate::rng::gaussian_samples(&mut rng, &[3, 2, 3, 3], 0.0, 1.0).unwrap();
        let bias: Tensor<f64> = crate::rng::gaussian_samples(&mut rng, &[3], 0.0, 1.0).unwrap();
        let fast = conv2d_forward(&input, &weight, &bias).unwrap();

        let (h, w, k, pad) = (6isize, 5isize, 3isize, 1isize);
        for oc in 0..3usize {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias.data()[oc];
                    for ic in 0..2usize {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y + ky - pad;
                                let sx = x + kx - pad;
                                if sy >= 0 && sy < h && sx >= 0 && sx < w {
                                    let widx = ((oc * 2 + ic) * 3 + ky as usize) * 3 + kx as usize;
                                    acc += weight.data()[widx]
                                        * input.at(ic, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    let got = fast.at(oc, y as usize, x as usize);
                    assert!(
                        (got - acc).abs() < 1e-12,
                        "mismatch at ({oc},{y},{x}): {got} vs {acc}"
                    );
                }
            }
        }
    }
}
