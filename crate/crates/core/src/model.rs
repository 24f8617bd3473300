//! The small convolutional denoiser: stacked zero-padded 3x3 convolutions
//! with rectifiers, an optional residual skip (`output = input - net(input)`),
//! per-channel biases and no batch normalization.

use crate::autodiff::{conv2d_forward, Tape, ValueId};
use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of convolution layers, >= 2. Every layer except the last is
    /// followed by a rectifier.
    pub depth: usize,
    /// Channels in the hidden layers.
    pub width: usize,
    /// Odd kernel extent.
    pub kernel: usize,
    /// When set, the network predicts the noise: `output = input - net(input)`.
    pub residual_skip: bool,
    #[serde(default = "default_channels")]
    pub in_channels: usize,
}

fn default_channels() -> usize {
    1
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 5,
            width: 16,
            kernel: 3,
            residual_skip: true,
            in_channels: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::parameter("model depth must be >= 2".to_string()));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::parameter("kernel extent must be odd".to_string()));
        }
        if self.width == 0 || self.in_channels == 0 {
            return Err(Error::parameter("width and in_channels must be > 0".to_string()));
        }
        Ok(())
    }

    fn layer_channels(&self) -> Vec<(usize, usize)> {
        let mut chans = Vec::with_capacity(self.depth);
        for i in 0..self.depth {
            let cin = if i == 0 { self.in_channels } else { self.width };
            let cout = if i == self.depth - 1 {
                self.in_channels
            } else {
                self.width
            };
            chans.push((cout, cin));
        }
        chans
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer<S> {
    pub weight: Tensor<S>, // (out, in, k, k)
    pub bias: Tensor<S>,   // (out)
}

#[derive(Debug, Clone)]
pub struct DenoiserModel<S: Scalar> {
    config: ModelConfig,
    layers: Vec<ConvLayer<S>>,
}

/// Tape handles for one registration of the model parameters, in the same
/// order as [`DenoiserModel::parameters`].
pub struct ModelParams {
    pub handles: Vec<ValueId>,
}

impl<S: Scalar> DenoiserModel<S> {
    /// He-style initialization for all layers except the last, which starts
    /// at zero so a freshly initialized residual model is the identity map.
    pub fn init(config: &ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let k = config.kernel;
        let mut layers = Vec::with_capacity(config.depth);
        let chans = config.layer_channels();
        for (i, &(cout, cin)) in chans.iter().enumerate() {
            let last = i == config.depth - 1;
            let std = if last {
                0.0
            } else {
                (2.0 / (cin * k * k) as f64).sqrt()
            };
            let weight = Tensor::from_fn(&[cout, cin, k, k], |_| {
                S::from_f64_c(std * rng.standard_normal())
            });
            let bias = Tensor::zeros(&[cout]);
            layers.push(ConvLayer { weight, bias });
        }
        Ok(DenoiserModel {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvLayer<S>] {
        &self.layers
    }

    /// Flat parameter list: weight, bias per layer in order.
    pub fn parameters(&self) -> Vec<Tensor<S>> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[Tensor<S>]) -> Result<()> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::parameter(format!(
                "expected {} parameter tensors, got {}",
                2 * self.layers.len(),
                params.len()
            )));
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if !layer.weight.same_shape(&params[2 * i]) || !layer.bias.same_shape(&params[2 * i + 1])
            {
                return Err(Error::parameter(format!("parameter {i} shape mismatch")));
            }
            layer.weight = params[2 * i].clone();
            layer.bias = params[2 * i + 1].clone();
        }
        Ok(())
    }

    /// Pure forward pass without a tape. `linear` skips the rectifiers.
    fn forward_impl(&self, x: &Tensor<S>, linear: bool) -> Result<Tensor<S>> {
        let (c, _, _) = x.chw()?;
        if c != self.config.in_channels {
            return Err(Error::parameter(format!(
                "forward: input has {c} channels, model expects {}",
                self.config.in_channels
            )));
        }
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = conv2d_forward(&cur, &layer.weight, &layer.bias)?;
            if i + 1 < self.layers.len() && !linear {
                cur = cur.map(|v| v.max(S::zero()));
            }
        }
        if self.config.residual_skip {
            cur = x.sub(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward_impl(x, false)
    }

    /// Forward pass treating the network as affine (rectifiers skipped).
    pub fn forward_linear(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward_impl(x, true)
    }

    pub fn register(&self, tape: &mut Tape<S>) -> ModelParams {
        let mut handles = Vec::with_capacity(2 * self.layers.len());
        for layer in &self.layers {
            handles.push(tape.parameter(layer.weight.clone()));
            handles.push(tape.parameter(layer.bias.clone()));
        }
        ModelParams { handles }
    }

    /// Differentiable forward pass against previously registered parameters.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<S>,
        params: &ModelParams,
        x: ValueId,
    ) -> Result<ValueId> {
        self.forward_tape_impl(tape, params, x, false)
    }

    pub fn forward_tape_linear(
        &self,
        tape: &mut Tape<S>,
        params: &ModelParams,
        x: ValueId,
    ) -> Result<ValueId> {
        self.forward_tape_impl(tape, params, x, true)
    }

    fn forward_tape_impl(
        &self,
        tape: &mut Tape<S>,
        params: &ModelParams,
        x: ValueId,
        linear: bool,
    ) -> Result<ValueId> {
        let mut cur = x;
        for i in 0..self.layers.len() {
            let w = params.handles[2 * i];
            let b = params.handles[2 * i + 1];
            cur = tape.conv2d(cur, w, b)?;
            if i + 1 < self.layers.len() && !linear {
                cur = tape.relu(cur);
            }
        }
        if self.config.residual_skip {
            cur = tape.sub(x, cur)?;
        }
        Ok(cur)
    }

    pub fn gradients(&self, tape: &Tape<S>, params: &ModelParams) -> Vec<Tensor<S>> {
        params.handles.iter().map(|&h| tape.gradient(h)).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    architecture: ModelConfig,
    step: usize,
    seed: u64,
    tensors: Vec<String>,
}

/// Writes `manifest.json` plus one PLDT file per parameter into `dir`.
pub fn save_checkpoint<S: Scalar>(
    dir: impl AsRef<Path>,
    model: &DenoiserModel<S>,
    step: usize,
    seed: u64,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        let wname = format!("layer{i:02}.weight.pldt");
        let bname = format!("layer{i:02}.bias.pldt");
        write_tensor(dir.join(&wname), &layer.weight)?;
        write_tensor(dir.join(&bname), &layer.bias)?;
        tensors.push(wname);
        tensors.push(bname);
    }
    let manifest = CheckpointManifest {
        architecture: model.config.clone(),
        step,
        seed,
        tensors,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(dir: impl AsRef<Path>) -> Result<(DenoiserModel<S>, usize, u64)> {
    let dir = dir.as_ref();
    let manifest: CheckpointManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    manifest.architecture.validate()?;
    if manifest.tensors.len() != 2 * manifest.architecture.depth {
        return Err(Error::format(format!(
            "checkpoint lists {} tensors for depth {}",
            manifest.tensors.len(),
            manifest.architecture.depth
        )));
    }
    let mut layers = Vec::with_capacity(manifest.architecture.depth);
    for pair in manifest.tensors.chunks(2) {
        let weight = read_tensor(dir.join(&pair[0]))?;
        let bias = read_tensor(dir.join(&pair[1]))?;
        layers.push(ConvLayer { weight, bias });
    }
    Ok((
        DenoiserModel {
            config: manifest.architecture,
            layers,
        },
        manifest.step,
        manifest.seed,
    ))
}
