//! Activation-informed model merging.
//!
//! The crate is `no_std` (with `alloc`) and holds every numeric piece of the
//! pipeline: dense `f64` tensors and named checkpoints, a small feed-forward
//! runtime with reverse-mode entropy gradients, calibration profiling, the
//! merge methods (averaging, task arithmetic, TIES, DARE and their
//! compositions), the activation/sensitivity relaxation, and exact
//! hypervolume scoring of benchmark vectors.
//!
//! File formats and the command-line driver live in the `aim-merge` crate.
//!
//! Features:
//! - `std`: implements `std::error::Error` through `thiserror`.
//! - `parallel`: per-sample profiling and per-tensor merging on rayon.
//!   Reductions stay sequential, so results are bitwise identical to the
//!   serial path.
//! - `serde`: derives for the configuration types.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod aim;
pub mod checkpoint;
mod error;
pub mod evaluation;
pub mod merge;
pub mod model;
pub mod profile;
pub mod rng;
pub mod tensor;

pub use aim::{
    relax_activation, relax_activation_by_name, relax_sensitivity, relaxation_factor, RelaxationConfig, Variant,
};
pub use checkpoint::{Checkpoint, CompatReport, ShapeDiff};
pub use error::{Error, Result};
pub use evaluation::{hv_gain, hypervolume, pareto_filter, HvReport, ParetoSet, ReferencePoint, ScoreTable};
pub use merge::{run_merge, task_vectors, MergeConfig, MergeDelta, MergeMethod};
pub use model::{backward_entropy, entropy_loss, forward, Activation, ForwardTrace, LayerSpec, ModelSpec};
pub use profile::{profile_activations, profile_sensitivity, ActivationProfile, CalibrationSet, SensitivityProfile};
pub use tensor::{BinaryOp, Tensor};

/// Default relaxation factor used when none is given.
pub const DEFAULT_OMEGA: f64 = 0.4;
