//! Minimal feed-forward runtime: stacked linear layers, an elementwise
//! nonlinearity per layer, and an entropy objective over the softmax of the
//! final outputs.
//!
//! Layer `L` reads its weight from `L.weight` with shape `[in_dim, out_dim]`
//! (so `y = x W`, row `i` belongs to input channel `i`) and, when enabled,
//! its bias from `L.bias` with shape `[out_dim]`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Relu,
    Tanh,
    #[default]
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => pre.max(0.0),
            Activation::Tanh => libm::tanh(pre),
            Activation::Identity => pre,
        }
    }

    /// Derivative with respect to the pre-activation, given both the
    /// pre-activation and the already computed output.
    #[inline]
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidSpec(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSpec {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub has_bias: bool,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self {
            name: name.into(),
            in_dim,
            out_dim,
            has_bias: false,
            activation: Activation::Identity,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.has_bias = true;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("no layers".into()));
        }
        let mut seen = BTreeSet::new();
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.in_dim == 0 || layer.out_dim == 0 {
                return Err(Error::InvalidSpec(format!(
                    "layer `{}` has a zero dimension",
                    layer.name
                )));
            }
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::InvalidSpec(format!("duplicate layer name `{}`", layer.name)));
            }
            if k > 0 && self.layers[k - 1].out_dim != layer.in_dim {
                return Err(Error::InvalidSpec(format!(
                    "layer `{}` in_dim {} does not match previous out_dim {}",
                    layer.name,
                    layer.in_dim,
                    self.layers[k - 1].out_dim
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Names and shapes of every parameter tensor, in layer order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((l.weight_name(), vec![l.in_dim, l.out_dim]));
            if l.has_bias {
                out.push((l.bias_name(), vec![l.out_dim]));
            }
        }
        out
    }

    /// Checks that `params` carries every tensor this spec reads, with the
    /// right shape. Extra tensors are allowed.
    pub fn check_params(&self, params: &Checkpoint) -> Result<()> {
        for (name, shape) in self.parameter_shapes() {
            let t = params.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    left: shape,
                    right: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a digest of the layer descriptors, as hex.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for l in &self.layers {
            let line = format!("{}:{}:{}:{}:{};", l.name, l.in_dim, l.out_dim, l.has_bias, l.activation);
            feed(line.as_bytes());
        }
        format!("{h:016x}")
    }
}

/// Everything a forward pass produced for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// The vector multiplied into each linear layer, one per layer.
    pub layer_inputs: Vec<Vec<f64>>,
    /// `x W + b` for each layer, before the nonlinearity.
    pub pre_activations: Vec<Vec<f64>>,
    /// Output of the last layer (softmax is not applied).
    pub logits: Vec<f64>,
}

pub fn forward(spec: &ModelSpec, params: &Checkpoint, input: &[f64]) -> Result<ForwardTrace> {
    spec.validate()?;
    spec.check_params(params)?;
    forward_unchecked(spec, params, input)
}

/// Forward pass without re-validating the spec against `params`. The caller
/// must have run [`ModelSpec::check_params`].
pub(crate) fn forward_unchecked(spec: &ModelSpec, params: &Checkpoint, input: &[f64]) -> Result<ForwardTrace> {
    if input.len() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "model input".into(),
            expected: spec.input_dim(),
            found: input.len(),
        });
    }
    let mut layer_inputs = Vec::with_capacity(spec.layers.len());
    let mut pre_activations = Vec::with_capacity(spec.layers.len());
    let mut x = input.to_vec();
    for layer in &spec.layers {
        let w = params.require(&layer.weight_name())?.data();
        let mut pre = match layer.has_bias {
            true => params.require(&layer.bias_name())?.data().to_vec(),
            false => vec![0.0; layer.out_dim],
        };
        for (i, &xi) in x.iter().enumerate() {
            let row = &w[i * layer.out_dim..(i + 1) * layer.out_dim];
            for (p, &wij) in pre.iter_mut().zip(row) {
                *p += xi * wij;
            }
        }
        let out: Vec<f64> = pre.iter().map(|&p| layer.activation.apply(p)).collect();
        layer_inputs.push(core::mem::replace(&mut x, out));
        pre_activations.push(pre);
    }
    Ok(ForwardTrace {
        layer_inputs,
        pre_activations,
        logits: x,
    })
}

/// `log(softmax(logits))`, computed with max subtraction.
fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| libm::exp(z - max)).sum();
    let lse = max + libm::log(sum);
    logits.iter().map(|&z| z - lse).collect()
}

/// Shannon entropy (nats) of `softmax(logits)`, clamped to `[0, ln K]`.
pub fn entropy_loss(logits: &[f64]) -> f64 {
    if logits.is_empty() {
        return 0.0;
    }
    let h: f64 = -log_softmax(logits).iter().map(|&lp| libm::exp(lp) * lp).sum::<f64>();
    h.clamp(0.0, libm::log(logits.len() as f64))
}

/// d entropy / d logits: `-p_j (log p_j + H)`.
fn entropy_logit_grad(logits: &[f64]) -> Vec<f64> {
    let logp = log_softmax(logits);
    let h: f64 = -logp.iter().map(|&lp| libm::exp(lp) * lp).sum::<f64>();
    logp.iter().map(|&lp| -libm::exp(lp) * (lp + h)).collect()
}

/// Gradient of `entropy_loss(forward(input).logits)` with respect to every
/// parameter tensor the spec reads.
pub fn backward_entropy(spec: &ModelSpec, params: &Checkpoint, input: &[f64]) -> Result<Checkpoint> {
    spec.validate()?;
    spec.check_params(params)?;
    backward_unchecked(spec, params, input)
}

pub(crate) fn backward_unchecked(spec: &ModelSpec, params: &Checkpoint, input: &[f64]) -> Result<Checkpoint> {
    let trace = forward_unchecked(spec, params, input)?;
    let mut grads = Checkpoint::new();
    // Gradient w.r.t. the current layer's output.
    let mut d_out = entropy_logit_grad(&trace.logits);
    for (k, layer) in spec.layers.iter().enumerate().rev() {
        let pre = &trace.pre_activations[k];
        let x = &trace.layer_inputs[k];
        let out: Vec<f64> = if k + 1 < spec.layers.len() {
            trace.layer_inputs[k + 1].clone()
        } else {
            trace.logits.clone()
        };
        let d_pre: Vec<f64> = d_out
            .iter()
            .zip(pre.iter().zip(&out))
            .map(|(&g, (&p, &o))| g * layer.activation.derivative(p, o))
            .collect();

        let mut d_w = Vec::with_capacity(layer.in_dim * layer.out_dim);
        for &xi in x {
            d_w.extend(d_pre.iter().map(|&g| xi * g));
        }
        grads.insert(
            layer.weight_name(),
            Tensor::new(vec![layer.in_dim, layer.out_dim], d_w)?,
        );
        if layer.has_bias {
            grads.insert(layer.bias_name(), Tensor::new(vec![layer.out_dim], d_pre.clone())?);
        }

        if k > 0 {
            let w = params.require(&layer.weight_name())?.data();
            d_out = (0..layer.in_dim)
                .map(|i| {
                    w[i * layer.out_dim..(i + 1) * layer.out_dim]
                        .iter()
                        .zip(&d_pre)
                        .map(|(&wij, &g)| wij * g)
                        .sum()
                })
                .collect();
        }
    }
    Ok(grads)
}

/// Mean entropy of the model's output distribution over `samples`.
pub fn mean_entropy(spec: &ModelSpec, params: &Checkpoint, samples: &[Vec<f64>]) -> Result<f64> {
    spec.validate()?;
    spec.check_params(params)?;
    if samples.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let mut total = 0.0;
    for s in samples {
        total += entropy_loss(&forward_unchecked(spec, params, s)?.logits);
    }
    Ok(total / samples.len() as f64)
}
