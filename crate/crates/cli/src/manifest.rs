//! Run manifests.
//!
//! Every command that writes files also writes `<primary output>.manifest.json`
//! holding the fully resolved arguments, SHA-256 digests of all inputs and
//! outputs, and the tool version. `aim rerun` replays a manifest after
//! checking that the inputs still hash the same.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::FormatError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(role: &str, path: &Path) -> Result<Self, FormatError> {
        Ok(Self {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Resolved arguments, with every default filled in.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialization cannot fail");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let bytes = crate::read_bytes(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| FormatError::Header(e.to_string()))?;
        Self::from_json(text)
    }

    /// Inputs whose current digest differs from the recorded one.
    pub fn changed_inputs(&self) -> Result<Vec<String>, FormatError> {
        let mut changed = Vec::new();
        for input in &self.inputs {
            if sha256_file(Path::new(&input.path))? != input.sha256 {
                changed.push(input.path.clone());
            }
        }
        Ok(changed)
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, FormatError> {
    Ok(sha256_hex(&crate::read_bytes(path)?))
}
