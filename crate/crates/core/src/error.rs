use alloc::string::String;
use alloc::vec::Vec;

use crate::checkpoint::CompatReport;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("invalid calibration set: {0}")]
    InvalidCalibration(String),

    #[error("checkpoints are not merge-compatible: {0}")]
    Incompatible(CompatReport),

    #[error("invalid merge config: {0}")]
    InvalidConfig(String),

    #[error("unknown merge method `{0}`")]
    UnknownMethod(String),

    #[error("{what} = {value} is outside {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("profile does not match: {0}")]
    ProfileMismatch(String),

    #[error("invalid score table: {0}")]
    InvalidScores(String),
}
