//! Merge methods over task vectors (`expert - base`).
//!
//! Every method reduces a list of per-expert deltas to one
//! [`MergeDelta`]; [`run_merge`] adds it back onto the base.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MergeMethod {
    Average,
    TaskArithmetic,
    Ties,
    DareTa,
    DareTies,
}

impl MergeMethod {
    pub const ALL: [MergeMethod; 5] = [
        MergeMethod::Average,
        MergeMethod::TaskArithmetic,
        MergeMethod::Ties,
        MergeMethod::DareTa,
        MergeMethod::DareTies,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MergeMethod::Average => "average",
            MergeMethod::TaskArithmetic => "task_arithmetic",
            MergeMethod::Ties => "ties",
            MergeMethod::DareTa => "dare_ta",
            MergeMethod::DareTies => "dare_ties",
        }
    }
}

impl fmt::Display for MergeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MergeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MergeMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownMethod(s.into()))
    }
}

pub const DEFAULT_DENSITY: f64 = 0.5;
pub const DEFAULT_DROP_RATE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MergeConfig {
    pub method: MergeMethod,
    /// One weight per expert. Empty means 1.0 for every expert.
    #[cfg_attr(feature = "serde", serde(default))]
    pub lambdas: Vec<f64>,
    #[cfg_attr(feature = "serde", serde(default = "default_density"))]
    pub density: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_drop_rate"))]
    pub drop_rate: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
}

#[cfg(feature = "serde")]
fn default_density() -> f64 {
    DEFAULT_DENSITY
}

#[cfg(feature = "serde")]
fn default_drop_rate() -> f64 {
    DEFAULT_DROP_RATE
}

impl MergeConfig {
    pub fn new(method: MergeMethod) -> Self {
        Self {
            method,
            lambdas: Vec::new(),
            density: DEFAULT_DENSITY,
            drop_rate: DEFAULT_DROP_RATE,
            seed: 0,
        }
    }

    /// Lambdas for `n` experts with defaults filled in.
    pub fn resolved_lambdas(&self, n: usize) -> Result<Vec<f64>> {
        if self.lambdas.is_empty() {
            return Ok(vec![1.0; n]);
        }
        if self.lambdas.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{} lambdas given for {n} experts",
                self.lambdas.len()
            )));
        }
        if self.lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidConfig("lambdas must be finite".into()));
        }
        Ok(self.lambdas.clone())
    }

    pub fn validate(&self, n_experts: usize) -> Result<()> {
        if n_experts == 0 {
            return Err(Error::InvalidConfig("at least one expert is required".into()));
        }
        self.resolved_lambdas(n_experts)?;
        check_density(self.density)?;
        check_drop_rate(self.drop_rate)
    }
}

fn check_density(density: f64) -> Result<()> {
    if density > 0.0 && density <= 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "density",
            value: density,
            range: "(0, 1]",
        })
    }
}

fn check_drop_rate(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "drop_rate",
            value: p,
            range: "[0, 1)",
        })
    }
}

/// Per-tensor parameter delta relative to a base checkpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeDelta {
    pub tensors: BTreeMap<String, Tensor>,
}

impl MergeDelta {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        Checkpoint {
            tensors: self.tensors,
            meta: BTreeMap::new(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Self {
        Self { tensors: c.tensors }
    }

    /// `base + self`; the name sets and shapes must agree.
    pub fn apply_to(&self, base: &Checkpoint) -> Result<Checkpoint> {
        self.check_matches(base)?;
        let mut out = Checkpoint {
            tensors: BTreeMap::new(),
            meta: base.meta.clone(),
        };
        for (name, b) in &base.tensors {
            out.insert(name.clone(), b.add(&self.tensors[name])?);
        }
        Ok(out)
    }

    pub fn check_matches(&self, base: &Checkpoint) -> Result<()> {
        let as_ckpt = Checkpoint {
            tensors: self.tensors.clone(),
            meta: BTreeMap::new(),
        };
        base.ensure_compatible(&as_ckpt)
    }
}

/// `expert - base` for every expert.
pub fn task_vectors(base: &Checkpoint, experts: &[Checkpoint]) -> Result<Vec<MergeDelta>> {
    experts
        .iter()
        .map(|e| {
            base.ensure_compatible(e)?;
            let tensors = base
                .tensors
                .iter()
                .map(|(name, b)| Ok((name.clone(), e.tensors[name].sub(b)?)))
                .collect::<Result<_>>()?;
            Ok(MergeDelta { tensors })
        })
        .collect()
}

fn check_deltas(deltas: &[MergeDelta], lambdas: &[f64]) -> Result<()> {
    let first = deltas
        .first()
        .ok_or_else(|| Error::InvalidConfig("at least one delta is required".into()))?;
    if lambdas.len() != deltas.len() {
        return Err(Error::InvalidConfig(format!(
            "{} lambdas given for {} deltas",
            lambdas.len(),
            deltas.len()
        )));
    }
    for d in &deltas[1..] {
        for (name, t) in &first.tensors {
            let other = d.get(name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if other.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    left: t.shape().to_vec(),
                    right: other.shape().to_vec(),
                });
            }
        }
        if d.tensors.len() != first.tensors.len() {
            let extra = d.tensors.keys().find(|k| !first.tensors.contains_key(*k));
            return Err(Error::MissingTensor(extra.cloned().unwrap_or_default()));
        }
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn per_tensor(names: Vec<&String>, f: impl Fn(&str) -> Result<Tensor> + Sync) -> Result<BTreeMap<String, Tensor>> {
    use rayon::prelude::*;
    names
        .into_par_iter()
        .map(|n| Ok((n.clone(), f(n)?)))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

#[cfg(not(feature = "parallel"))]
fn per_tensor(names: Vec<&String>, f: impl Fn(&str) -> Result<Tensor>) -> Result<BTreeMap<String, Tensor>> {
    names.into_iter().map(|n| Ok((n.clone(), f(n)?))).collect()
}

fn weighted_sum(deltas: &[MergeDelta], lambdas: &[f64], scale: f64) -> Result<MergeDelta> {
    check_deltas(deltas, lambdas)?;
    let tensors = per_tensor(deltas[0].tensors.keys().collect(), |name| {
        let mut acc = vec![0.0; deltas[0].tensors[name].len()];
        for (d, &lambda) in deltas.iter().zip(lambdas) {
            for (a, &v) in acc.iter_mut().zip(d.tensors[name].data()) {
                *a += lambda * v;
            }
        }
        if scale != 1.0 {
            acc.iter_mut().for_each(|a| *a *= scale);
        }
        Tensor::new(deltas[0].tensors[name].shape().to_vec(), acc)
    })?;
    Ok(MergeDelta { tensors })
}

/// `(1/n) * sum(lambda_i * delta_i)`.
pub fn merge_average(deltas: &[MergeDelta], lambdas: &[f64]) -> Result<MergeDelta> {
    weighted_sum(deltas, lambdas, 1.0 / deltas.len().max(1) as f64)
}

/// `sum(lambda_i * delta_i)`.
pub fn merge_task_arithmetic(deltas: &[MergeDelta], lambdas: &[f64]) -> Result<MergeDelta> {
    weighted_sum(deltas, lambdas, 1.0)
}

/// Drops each entry with probability `drop_rate` and rescales survivors by
/// `1 / (1 - drop_rate)`.
///
/// The keep/drop draw for entry `i` of tensor `name` comes from the stream
/// keyed by `(seed, name)` at counter `i`.
pub fn dare_sparsify(delta: &MergeDelta, drop_rate: f64, seed: u64) -> Result<MergeDelta> {
    check_drop_rate(drop_rate)?;
    if drop_rate == 0.0 {
        return Ok(delta.clone());
    }
    let root = StreamKey::new(seed);
    let rescale = 1.0 / (1.0 - drop_rate);
    let tensors = per_tensor(delta.tensors.keys().collect(), |name| {
        let t = &delta.tensors[name];
        let key = root.split_str(name);
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if key.unit_at(i as u64) < drop_rate {
                    0.0
                } else {
                    v * rescale
                }
            })
            .collect();
        Tensor::new(t.shape().to_vec(), data)
    })?;
    Ok(MergeDelta { tensors })
}

/// Indices of the `k` largest entries by magnitude; ties go to the lower
/// index.
fn top_k_mask(values: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let mut keep = vec![false; values.len()];
    for &i in order.iter().take(k) {
        keep[i] = true;
    }
    keep
}

/// Number of entries TIES keeps out of `len`: `ceil(density * len)`.
pub fn ties_keep_count(len: usize, density: f64) -> usize {
    (libm::ceil(density * len as f64) as usize)
        .clamp(1, len.max(1))
        .min(len)
}

/// TIES: trim each delta to its top `ceil(density * K)` magnitudes, elect
/// the sign of the lambda-weighted sum per entry, then average the weighted
/// values that agree with it (over the agreeing models only).
pub fn ties_merge(deltas: &[MergeDelta], lambdas: &[f64], density: f64) -> Result<MergeDelta> {
    check_density(density)?;
    check_deltas(deltas, lambdas)?;
    let tensors = per_tensor(deltas[0].tensors.keys().collect(), |name| {
        let len = deltas[0].tensors[name].len();
        let k = ties_keep_count(len, density);
        let weighted: Vec<Vec<f64>> = deltas
            .iter()
            .zip(lambdas)
            .map(|(d, &lambda)| {
                let data = d.tensors[name].data();
                let keep = top_k_mask(data, k);
                data.iter()
                    .zip(keep)
                    .map(|(&v, kept)| if kept { lambda * v } else { 0.0 })
                    .collect()
            })
            .collect();
        let merged = (0..len)
            .map(|j| {
                let total: f64 = weighted.iter().map(|w| w[j]).sum();
                if total == 0.0 {
                    return 0.0;
                }
                let (sum, count) = weighted
                    .iter()
                    .map(|w| w[j])
                    .filter(|&v| v != 0.0 && (v > 0.0) == (total > 0.0))
                    .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
                if count == 0 {
                    0.0
                } else {
                    sum / count as f64
                }
            })
            .collect();
        Tensor::new(deltas[0].tensors[name].shape().to_vec(), merged)
    })?;
    Ok(MergeDelta { tensors })
}

/// Seed used for the DARE draws of expert `index` under a run seed.
pub fn expert_seed(seed: u64, index: usize) -> u64 {
    StreamKey::new(seed).split(index as u64).u64_at(0)
}

/// Merges `experts` onto `base` and returns the merged delta together with
/// `base + delta`.
pub fn run_merge(base: &Checkpoint, experts: &[Checkpoint], config: &MergeConfig) -> Result<(MergeDelta, Checkpoint)> {
    config.validate(experts.len())?;
    let lambdas = config.resolved_lambdas(experts.len())?;
    let deltas = task_vectors(base, experts)?;
    let dare = |deltas: Vec<MergeDelta>| -> Result<Vec<MergeDelta>> {
        deltas
            .iter()
            .enumerate()
            .map(|(i, d)| dare_sparsify(d, config.drop_rate, expert_seed(config.seed, i)))
            .collect()
    };
    let merged = match config.method {
        MergeMethod::Average => merge_average(&deltas, &lambdas)?,
        MergeMethod::TaskArithmetic => merge_task_arithmetic(&deltas, &lambdas)?,
        MergeMethod::Ties => ties_merge(&deltas, &lambdas, config.density)?,
        MergeMethod::DareTa => merge_task_arithmetic(&dare(deltas)?, &lambdas)?,
        MergeMethod::DareTies => ties_merge(&dare(deltas)?, &lambdas, config.density)?,
    };
    let model = merged.apply_to(base)?;
    Ok((merged, model))
}
