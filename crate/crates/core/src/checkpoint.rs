//! Named collections of tensors.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A set of uniquely named tensors plus free-form string metadata.
///
/// Both maps are ordered by key so iteration (and therefore serialization)
/// is lexicographic and reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tensor(mut self, name: impl Into<String>, tensor: Tensor) -> Self {
        self.tensors.insert(name.into(), tensor);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::MissingTensor(name.into()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// First tensor holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(n, _)| n.as_str())
    }

    /// Lists every difference that prevents merging `other` into `self`.
    pub fn compat_check(&self, other: &Checkpoint) -> CompatReport {
        let mut report = CompatReport::default();
        for (name, a) in &self.tensors {
            match other.tensors.get(name) {
                None => report.missing_in_other.push(name.clone()),
                Some(b) if a.shape() != b.shape() => report.shape_mismatches.push(ShapeDiff {
                    name: name.clone(),
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                }),
                Some(_) => {}
            }
        }
        report.extra_in_other = other
            .tensors
            .keys()
            .filter(|k| !self.tensors.contains_key(*k))
            .cloned()
            .collect();
        report
    }

    pub fn ensure_compatible(&self, other: &Checkpoint) -> Result<()> {
        let report = self.compat_check(other);
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::Incompatible(report))
        }
    }
}

impl core::ops::Index<&str> for Checkpoint {
    type Output = Tensor;

    fn index(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeDiff {
    pub name: String,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

/// Name-set and shape differences between two checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompatReport {
    /// Present in the reference checkpoint, absent from the other one.
    pub missing_in_other: Vec<String>,
    /// Present only in the other checkpoint.
    pub extra_in_other: Vec<String>,
    pub shape_mismatches: Vec<ShapeDiff>,
}

impl CompatReport {
    pub fn is_empty(&self) -> bool {
        self.missing_in_other.is_empty() && self.extra_in_other.is_empty() && self.shape_mismatches.is_empty()
    }
}

impl fmt::Display for CompatReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("compatible");
        }
        let mut parts = Vec::new();
        if !self.missing_in_other.is_empty() {
            parts.push(alloc::format!("missing {:?}", self.missing_in_other));
        }
        if !self.extra_in_other.is_empty() {
            parts.push(alloc::format!("unexpected {:?}", self.extra_in_other));
        }
        for d in &self.shape_mismatches {
            parts.push(alloc::format!("`{}` shape {:?} vs {:?}", d.name, d.left, d.right));
        }
        f.write_str(&parts.join("; "))
    }
}
