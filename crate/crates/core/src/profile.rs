//! Calibration profiling of a base model.
//!
//! Activation saliency: for every linear layer, the mean absolute value of
//! each input channel over the calibration samples, divided by the largest
//! channel mean of that layer. Sensitivity: for every parameter, the mean
//! absolute entropy gradient over the samples, divided by the largest entry
//! of its tensor. A layer or tensor whose maximum is zero yields all zeros.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{backward_unchecked, forward_unchecked, ModelSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    samples: Vec<Vec<f64>>,
    pub source_id: String,
}

impl CalibrationSet {
    pub fn new(samples: Vec<Vec<f64>>, source_id: impl Into<String>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyCalibration)?.len();
        if first == 0 {
            return Err(Error::InvalidCalibration("samples have zero length".into()));
        }
        for (k, s) in samples.iter().enumerate() {
            if s.len() != first {
                return Err(Error::InvalidCalibration(format!(
                    "sample {k} has length {}, expected {first}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("calibration sample {k}")));
            }
        }
        Ok(Self {
            samples,
            source_id: source_id.into(),
        })
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    /// The first `n` samples as a new set.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(self.samples[..n.min(self.len())].to_vec(), self.source_id.clone())
    }

    fn check_for(&self, spec: &ModelSpec) -> Result<()> {
        if self.dim() != spec.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "calibration sample".into(),
                expected: spec.input_dim(),
                found: self.dim(),
            });
        }
        Ok(())
    }
}

fn check_unit_interval(values: &[f64], what: &str) -> Result<()> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::ProfileMismatch(format!("{what} has entry {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Divides by the maximum so the largest entry becomes exactly 1.0, or
/// zeroes everything when the maximum is 0.
fn normalize_by_max(values: &mut [f64]) {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Per-layer input-channel saliency in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProfile {
    pub layers: BTreeMap<String, Vec<f64>>,
    pub sample_count: usize,
    pub model_spec_id: String,
}

impl ActivationProfile {
    pub fn new(
        layers: BTreeMap<String, Vec<f64>>,
        sample_count: usize,
        model_spec_id: impl Into<String>,
    ) -> Result<Self> {
        for (name, v) in &layers {
            check_unit_interval(v, name)?;
        }
        Ok(Self {
            layers,
            sample_count,
            model_spec_id: model_spec_id.into(),
        })
    }

    /// Every layer has max exactly 1 or is all zeros.
    pub fn is_normalized(&self) -> bool {
        self.layers.values().all(|v| is_max_normalized(v))
    }

    /// Checks that the profile covers exactly the layers of `spec` with one
    /// entry per input channel.
    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::ProfileMismatch(format!(
                "profile has {} layers, spec has {}",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for layer in &spec.layers {
            let v = self
                .layers
                .get(&layer.name)
                .ok_or_else(|| Error::ProfileMismatch(format!("no entry for layer `{}`", layer.name)))?;
            if v.len() != layer.in_dim {
                return Err(Error::ProfileMismatch(format!(
                    "layer `{}` has {} channels, profile has {}",
                    layer.name,
                    layer.in_dim,
                    v.len()
                )));
            }
        }
        Ok(())
    }

    /// Cosine similarity per layer against another profile over the same
    /// layers. Two all-zero vectors count as identical.
    pub fn cosine_similarity(&self, other: &ActivationProfile) -> Result<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        for (name, a) in &self.layers {
            let b = other
                .layers
                .get(name)
                .ok_or_else(|| Error::ProfileMismatch(format!("no entry for layer `{name}`")))?;
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    context: format!("profile layer `{name}`"),
                    expected: a.len(),
                    found: b.len(),
                });
            }
            out.insert(name.clone(), cosine(a, b));
        }
        Ok(out)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    match (na > 0.0, nb > 0.0) {
        (true, true) => dot / (na * nb),
        (false, false) => 1.0,
        _ => 0.0,
    }
}

fn is_max_normalized(v: &[f64]) -> bool {
    let max = v.iter().copied().fold(0.0, f64::max);
    max == 1.0 || v.iter().all(|&x| x == 0.0)
}

/// Per-parameter gradient sensitivity in `[0, 1]`, same shapes as the model
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityProfile {
    pub tensors: BTreeMap<String, Tensor>,
    pub sample_count: usize,
    pub model_spec_id: String,
}

impl SensitivityProfile {
    pub fn new(
        tensors: BTreeMap<String, Tensor>,
        sample_count: usize,
        model_spec_id: impl Into<String>,
    ) -> Result<Self> {
        for (name, t) in &tensors {
            check_unit_interval(t.data(), name)?;
        }
        Ok(Self {
            tensors,
            sample_count,
            model_spec_id: model_spec_id.into(),
        })
    }

    pub fn is_normalized(&self) -> bool {
        self.tensors.values().all(|t| is_max_normalized(t.data()))
    }
}

#[cfg(feature = "parallel")]
fn per_sample<T: Send>(samples: &[Vec<f64>], f: impl Fn(&[f64]) -> Result<T> + Sync) -> Result<Vec<T>> {
    use rayon::prelude::*;
    samples.par_iter().map(|s| f(s)).collect()
}

#[cfg(not(feature = "parallel"))]
fn per_sample<T>(samples: &[Vec<f64>], f: impl Fn(&[f64]) -> Result<T>) -> Result<Vec<T>> {
    samples.iter().map(|s| f(s)).collect()
}

pub fn profile_activations(spec: &ModelSpec, base: &Checkpoint, calib: &CalibrationSet) -> Result<ActivationProfile> {
    spec.validate()?;
    spec.check_params(base)?;
    calib.check_for(spec)?;

    let traces = per_sample(calib.samples(), |s| {
        forward_unchecked(spec, base, s).map(|t| t.layer_inputs)
    })?;
    let mut sums: Vec<Vec<f64>> = spec.layers.iter().map(|l| vec![0.0; l.in_dim]).collect();
    // summed in sample order so the result does not depend on scheduling
    for inputs in &traces {
        for (acc, x) in sums.iter_mut().zip(inputs) {
            for (a, v) in acc.iter_mut().zip(x) {
                *a += v.abs();
            }
        }
    }
    let n = calib.len() as f64;
    let layers = spec
        .layers
        .iter()
        .zip(sums)
        .map(|(layer, mut acc)| {
            acc.iter_mut().for_each(|a| *a /= n);
            normalize_by_max(&mut acc);
            (layer.name.clone(), acc)
        })
        .collect();
    ActivationProfile::new(layers, calib.len(), spec.fingerprint())
}

pub fn profile_sensitivity(spec: &ModelSpec, base: &Checkpoint, calib: &CalibrationSet) -> Result<SensitivityProfile> {
    spec.validate()?;
    spec.check_params(base)?;
    calib.check_for(spec)?;

    let grads = per_sample(calib.samples(), |s| backward_unchecked(spec, base, s))?;
    let mut sums: BTreeMap<String, Vec<f64>> = spec
        .parameter_shapes()
        .into_iter()
        .map(|(name, shape)| (name, vec![0.0; shape.iter().product()]))
        .collect();
    for g in &grads {
        for (name, acc) in sums.iter_mut() {
            let t = g.require(name)?;
            for (a, v) in acc.iter_mut().zip(t.data()) {
                *a += v.abs();
            }
        }
    }
    let n = calib.len() as f64;
    let mut tensors = BTreeMap::new();
    for (name, shape) in spec.parameter_shapes() {
        let mut acc = sums.remove(&name).unwrap_or_default();
        acc.iter_mut().for_each(|a| *a /= n);
        normalize_by_max(&mut acc);
        tensors.insert(name, Tensor::new(shape, acc)?);
    }
    SensitivityProfile::new(tensors, calib.len(), spec.fingerprint())
}
