//! Profile JSON.
//!
//! ```json
//! {"kind": "activation", "model_spec_id": "..", "sample_count": 16, "layers": {"l0": [0.25, 1.0]}}
//! {"kind": "sensitivity", "model_spec_id": "..", "sample_count": 16,
//!  "tensors": {"l0.weight": {"shape": [2, 2], "values": [..]}}}
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load is exact.

use std::collections::BTreeMap;
use std::path::Path;

use aim_core::{ActivationProfile, SensitivityProfile, Tensor};
use serde::{Deserialize, Serialize};

use crate::FormatError;

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Activation(ActivationProfile),
    Sensitivity(SensitivityProfile),
}

impl Profile {
    pub fn kind(&self) -> &'static str {
        match self {
            Profile::Activation(_) => "activation",
            Profile::Sensitivity(_) => "sensitivity",
        }
    }

    pub fn model_spec_id(&self) -> &str {
        match self {
            Profile::Activation(p) => &p.model_spec_id,
            Profile::Sensitivity(p) => &p.model_spec_id,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Document {
    Activation {
        model_spec_id: String,
        sample_count: usize,
        layers: BTreeMap<String, Vec<f64>>,
    },
    Sensitivity {
        model_spec_id: String,
        sample_count: usize,
        tensors: BTreeMap<String, TensorDoc>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorDoc {
    shape: Vec<usize>,
    values: Vec<f64>,
}

pub fn to_json(profile: &Profile) -> String {
    let doc = match profile {
        Profile::Activation(p) => Document::Activation {
            model_spec_id: p.model_spec_id.clone(),
            sample_count: p.sample_count,
            layers: p.layers.clone(),
        },
        Profile::Sensitivity(p) => Document::Sensitivity {
            model_spec_id: p.model_spec_id.clone(),
            sample_count: p.sample_count,
            tensors: p
                .tensors
                .iter()
                .map(|(n, t)| {
                    (
                        n.clone(),
                        TensorDoc {
                            shape: t.shape().to_vec(),
                            values: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        },
    };
    serde_json::to_string_pretty(&doc).expect("profile serialization cannot fail")
}

pub fn from_json(text: &str) -> Result<Profile, FormatError> {
    Ok(match serde_json::from_str(text)? {
        Document::Activation {
            model_spec_id,
            sample_count,
            layers,
        } => Profile::Activation(ActivationProfile::new(layers, sample_count, model_spec_id)?),
        Document::Sensitivity {
            model_spec_id,
            sample_count,
            tensors,
        } => {
            let tensors = tensors
                .into_iter()
                .map(|(n, t)| Ok((n, Tensor::new(t.shape, t.values)?)))
                .collect::<Result<_, aim_core::Error>>()?;
            Profile::Sensitivity(SensitivityProfile::new(tensors, sample_count, model_spec_id)?)
        }
    })
}

pub fn save(profile: &Profile, path: &Path) -> Result<(), FormatError> {
    let mut text = to_json(profile);
    text.push('\n');
    crate::write_bytes(path, text.as_bytes())
}

pub fn load(path: &Path) -> Result<Profile, FormatError> {
    let bytes = crate::read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| FormatError::Header(e.to_string()))?;
    from_json(text)
}
