//! Partially linear denoisers at desk scale.
//!
//! The crate trains image denoisers and deblurrers from noisy observations
//! alone, using an auxiliary-vector loss whose expectation matches the MSE up
//! to a constant for partially linear models, and it verifies that theory
//! numerically: loss–MSE equivalence for linear denoisers, approximation
//! bounds for small residuals, Monte-Carlo decompositions
//! `R(y_hat) = g(x) + L n_hat + e`, and noise-variance estimators that work
//! from the data alone.
//!
//! The numeric substrate ([`tensor`], [`autodiff`], [`model`], [`optim`],
//! [`metrics`]) is generic over the scalar type via [`scalar::Scalar`]
//! (`f32` or `f64`); the statistical layers are pinned to [`Real`] because
//! every stated tolerance assumes double precision.

pub mod autodiff;
pub mod decomposition;
pub mod error;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod optim;
pub mod parallel;
pub mod rng;
pub mod scalar;
pub mod suites;
pub mod tensor;
pub mod trainer;
pub mod variance;
pub mod verification;

pub use error::{Error, Result};

/// Working precision of the statistical layers.
pub type Real = f64;

/// Dense image/patch/noise tensor at working precision, laid out
/// `(channels, height, width)` for images.
pub type TensorImage = tensor::Tensor<Real>;

/// Single-precision tensor, the payload type of the PLDT container.
pub type Tensor32 = tensor::Tensor<f32>;
