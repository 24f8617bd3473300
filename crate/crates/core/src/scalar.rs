//! Scalar abstraction for the numeric substrate.
//!
//! The tensor, autodiff and model layers are generic over [`Scalar`] so they
//! compile for `f32` and `f64` alike. The statistical layers (losses,
//! decomposition, verification) are pinned to [`crate::Real`] — double
//! precision — because the gradient oracles and Monte-Carlo tolerances are
//! specified for it.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable by every numeric kernel in this crate.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; panics only for types that cannot
    /// represent ordinary finite constants, which f32/f64 always can.
    fn from_f64_c(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constant must convert")
    }

    /// Widening (or identity) conversion to `f64`.
    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
