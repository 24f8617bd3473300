//! Dense row-major tensors.
//!
//! A [`Tensor`] is an immutable-ish value type: operations return new tensors
//! and in-place mutation is confined to explicitly named `*_mut`/`*_assign`
//! methods used by hot loops. Images are stored as rank-3 `(channels, height,
//! width)` tensors with intensities nominally in `[0, 1]`; nothing clamps
//! values internally — noise is allowed to push samples outside that range
//! and only the PGM exporter clips.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::parameter(format!(
                "data length {} does not match shape {:?} (expects {})",
                data.len(),
                shape,
                expected
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// True when every sample is finite. Public operations are expected to
    /// preserve this; estimators assert it at their boundaries.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::parameter(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.check_same_shape(other, "zip_with")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul_elem(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: S) -> Self {
        self.map(|v| v * s)
    }

    /// `self += s * other`, elementwise.
    pub fn axpy_assign(&mut self, s: S, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.axpy_assign(S::one(), other)
    }

    pub fn dot(&self, other: &Self) -> Result<S> {
        self.check_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn sum_sq(&self) -> S {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn mean(&self) -> S {
        if self.data.is_empty() {
            S::zero()
        } else {
            self.sum() / S::from_usize(self.len()).unwrap()
        }
    }

    /// Mean of squares over all samples (the per-pixel squared norm).
    pub fn mean_sq(&self) -> S {
        if self.data.is_empty() {
            S::zero()
        } else {
            self.sum_sq() / S::from_usize(self.len()).unwrap()
        }
    }

    pub fn min_value(&self) -> S {
        self.data.iter().copied().fold(S::infinity(), S::min)
    }

    pub fn max_value(&self) -> S {
        self.data.iter().copied().fold(S::neg_infinity(), S::max)
    }

    pub fn clamp_values(&self, lo: S, hi: S) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    /// Converts between scalar types, rounding through the target precision.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::from_f64_c(v.to_f64_c())).collect(),
        }
    }
}

/// Shape helpers for image tensors laid out as `(channels, height, width)`.
impl<S: Scalar> Tensor<S> {
    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Tensor::zeros(&[channels, height, width])
    }

    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [c, h, w] => Ok((*c, *h, *w)),
            other => Err(Error::parameter(format!(
                "expected rank-3 (c,h,w) tensor, got shape {other:?}"
            ))),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> S {
        let (_, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        debug_assert!(y < h && x < w);
        self.data[(c * h + y) * w + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: S) {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::<f64>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn arithmetic_matches_naive_reference() {
        let a = Tensor::from_fn(&[10, 10], |i| i as f64 * 0.01);
        let b = Tensor::from_fn(&[10, 10], |i| 1.0 - i as f64 * 0.005);
        let sum = a.add(&b).unwrap();
        for i in 0..100 {
            assert_eq!(sum.data()[i], a.data()[i] + b.data()[i]);
        }
        let dot = a.dot(&b).unwrap();
        let mut naive = 0.0;
        for i in 0..100 {
            naive += a.data()[i] * b.data()[i];
        }
        assert_eq!(dot, naive);
        let scaled = a.scale(2.5);
        for i in 0..100 {
            assert_eq!(scaled.data()[i], a.data()[i] * 2.5);
        }
    }

    #[test]
    fn cast_round_trips_through_f32_with_f32_precision() {
        let a = Tensor::<f64>::from_vec(&[3], vec![1e-9, 0.5, 1.0]).unwrap();
        let b: Tensor<f64> = a.cast::<f32>().cast();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= (*x as f32).abs() as f64 * 1e-6 + 1e-12);
        }
    }
}
