//! Post-merge relaxation toward the base model.
//!
//! Every delta entry is scaled by `1 - s * (1 - omega)` where `s` in
//! `[0, 1]` is the saliency of the entry: the activation saliency of the
//! weight row's input channel, or the gradient sensitivity of the parameter.
//! `omega = 1` leaves the merge untouched; `omega = 0` pulls fully salient
//! entries back to the base weights.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::merge::MergeDelta;
use crate::model::ModelSpec;
use crate::profile::{ActivationProfile, SensitivityProfile};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Variant {
    Activation,
    Sensitivity,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Activation => "activation",
            Variant::Sensitivity => "sensitivity",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activation" => Ok(Variant::Activation),
            "sensitivity" => Ok(Variant::Sensitivity),
            other => Err(Error::InvalidConfig(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelaxationConfig {
    pub omega: f64,
    pub variant: Variant,
}

impl RelaxationConfig {
    pub fn new(omega: f64, variant: Variant) -> Result<Self> {
        check_omega(omega)?;
        Ok(Self { omega, variant })
    }
}

impl Default for RelaxationConfig {
    fn default() -> Self {
        Self {
            omega: crate::DEFAULT_OMEGA,
            variant: Variant::Activation,
        }
    }
}

pub fn check_omega(omega: f64) -> Result<()> {
    if (0.0..=1.0).contains(&omega) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "omega",
            value: omega,
            range: "[0, 1]",
        })
    }
}

/// `1 - saliency * (1 - omega)`, which lies in `[omega, 1]`.
pub fn relaxation_factor(saliency: f64, omega: f64) -> Result<f64> {
    check_omega(omega)?;
    if !(0.0..=1.0).contains(&saliency) {
        return Err(Error::OutOfRange {
            what: "saliency",
            value: saliency,
            range: "[0, 1]",
        });
    }
    Ok(factor(saliency, omega))
}

#[inline]
fn factor(saliency: f64, omega: f64) -> f64 {
    1.0 - saliency * (1.0 - omega)
}

/// Activation variant: row `i` of each profiled `L.weight` delta is scaled
/// by the factor of channel `i`. Every other tensor gets its full delta.
pub fn relax_activation(
    base: &Checkpoint,
    delta: &MergeDelta,
    profile: &ActivationProfile,
    spec: &ModelSpec,
    omega: f64,
) -> Result<Checkpoint> {
    check_omega(omega)?;
    spec.validate()?;
    profile.check_spec(spec)?;
    delta.check_matches(base)?;
    for l in &spec.layers {
        let d = delta
            .tensors
            .get(&l.weight_name())
            .ok_or_else(|| Error::MissingTensor(l.weight_name()))?;
        if d.shape() != [l.in_dim, l.out_dim] {
            return Err(Error::ShapeMismatch {
                left: alloc::vec![l.in_dim, l.out_dim],
                right: d.shape().to_vec(),
            });
        }
    }
    let rows = spec
        .layers
        .iter()
        .map(|l| (l.weight_name(), profile.layers[&l.name].as_slice()))
        .collect();
    relax_rows(base, delta, &rows, omega)
}

/// Like [`relax_activation`], but pairs profile layer `L` with tensor
/// `L.weight` by name alone. Every profiled layer must have a 2-D weight
/// with one row per channel.
pub fn relax_activation_by_name(
    base: &Checkpoint,
    delta: &MergeDelta,
    profile: &ActivationProfile,
    omega: f64,
) -> Result<Checkpoint> {
    check_omega(omega)?;
    delta.check_matches(base)?;
    let mut rows = BTreeMap::new();
    for (layer, saliency) in &profile.layers {
        let name = format!("{layer}.weight");
        let t = delta
            .get(&name)
            .ok_or_else(|| Error::ProfileMismatch(format!("layer `{layer}` has no tensor `{name}`")))?;
        if t.shape().len() != 2 || t.shape()[0] != saliency.len() {
            return Err(Error::ProfileMismatch(format!(
                "`{name}` has shape {:?}, profile has {} channels",
                t.shape(),
                saliency.len()
            )));
        }
        rows.insert(name, saliency.as_slice());
    }
    relax_rows(base, delta, &rows, omega)
}

fn relax_rows(
    base: &Checkpoint,
    delta: &MergeDelta,
    rows: &BTreeMap<String, &[f64]>,
    omega: f64,
) -> Result<Checkpoint> {
    let mut out = Checkpoint {
        tensors: Default::default(),
        meta: base.meta.clone(),
    };
    for (name, b) in &base.tensors {
        let d = &delta.tensors[name];
        let relaxed = match rows.get(name) {
            None => b.add(d)?,
            Some(saliency) => {
                let (n_rows, width) = d.rows();
                if n_rows != saliency.len() {
                    return Err(Error::ShapeMismatch {
                        left: alloc::vec![saliency.len(), width],
                        right: d.shape().to_vec(),
                    });
                }
                let data: Vec<f64> = b
                    .data()
                    .chunks(width)
                    .zip(d.data().chunks(width))
                    .zip(saliency.iter())
                    .flat_map(|((brow, drow), &s)| {
                        let f = factor(s, omega);
                        brow.iter().zip(drow).map(move |(&bv, &dv)| bv + f * dv)
                    })
                    .collect();
                Tensor::new(b.shape().to_vec(), data)?
            }
        };
        out.insert(name.clone(), relaxed);
    }
    Ok(out)
}

/// Sensitivity variant: each delta entry is scaled by the factor of its own
/// sensitivity. Tensors absent from the profile get their full delta.
pub fn relax_sensitivity(
    base: &Checkpoint,
    delta: &MergeDelta,
    profile: &SensitivityProfile,
    omega: f64,
) -> Result<Checkpoint> {
    check_omega(omega)?;
    delta.check_matches(base)?;

    let mut out = Checkpoint {
        tensors: Default::default(),
        meta: base.meta.clone(),
    };
    for (name, b) in &base.tensors {
        let d = &delta.tensors[name];
        let relaxed = match profile.tensors.get(name) {
            None => b.add(d)?,
            Some(g) => {
                if g.shape() != d.shape() {
                    return Err(Error::ShapeMismatch {
                        left: g.shape().to_vec(),
                        right: d.shape().to_vec(),
                    });
                }
                let data = b
                    .data()
                    .iter()
                    .zip(d.data())
                    .zip(g.data())
                    .map(|((&bv, &dv), &s)| bv + factor(s, omega) * dv)
                    .collect();
                Tensor::new(b.shape().to_vec(), data)?
            }
        };
        out.insert(name.clone(), relaxed);
    }
    Ok(out)
}

/// Names of profile tensors that do not correspond to any delta tensor.
pub fn unmatched_profile_tensors(delta: &MergeDelta, profile: &SensitivityProfile) -> Vec<String> {
    profile
        .tensors
        .keys()
        .filter(|k| !delta.tensors.contains_key(*k))
        .cloned()
        .collect()
}
