//! Model spec JSON: `{"layers": [{"name": "l0", "in_dim": 4, "out_dim": 3,
//! "has_bias": true, "activation": "relu"}, ...]}`.

use std::path::Path;

use aim_core::ModelSpec;

use crate::FormatError;

pub fn from_json(text: &str) -> Result<ModelSpec, FormatError> {
    let spec: ModelSpec = serde_json::from_str(text)?;
    spec.validate()?;
    Ok(spec)
}

pub fn to_json(spec: &ModelSpec) -> String {
    serde_json::to_string_pretty(spec).expect("spec serialization cannot fail")
}

pub fn load(path: &Path) -> Result<ModelSpec, FormatError> {
    let bytes = crate::read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| FormatError::Header(e.to_string()))?;
    from_json(text)
}
