//! Pareto filtering and exact hypervolume over benchmark score vectors.
//!
//! All objectives are maximized. The hypervolume of a set is the Lebesgue
//! measure of the union of boxes `[r, x]`; the gain of a merged model is the
//! `d`-th root of how much adding it grows that measure.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};

/// Named score vectors over a fixed list of benchmarks, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    benchmarks: Vec<String>,
    rows: Vec<(String, Vec<f64>)>,
}

impl ScoreTable {
    pub fn new(benchmarks: Vec<String>, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if benchmarks.is_empty() {
            return Err(Error::InvalidScores("no benchmark columns".into()));
        }
        let mut names = BTreeSet::new();
        for (name, values) in &rows {
            if !names.insert(name.as_str()) {
                return Err(Error::InvalidScores(format!("duplicate model `{name}`")));
            }
            if values.len() != benchmarks.len() {
                return Err(Error::InvalidScores(format!(
                    "model `{name}` has {} scores, expected {}",
                    values.len(),
                    benchmarks.len()
                )));
            }
            if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidScores(format!(
                    "model `{name}` has score {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self { benchmarks, rows })
    }

    pub fn dim(&self) -> usize {
        self.benchmarks.len()
    }

    pub fn benchmarks(&self) -> &[String] {
        &self.benchmarks
    }

    pub fn rows(&self) -> &[(String, Vec<f64>)] {
        &self.rows
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.rows.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Score vectors for `names`, in that order.
    pub fn select(&self, names: &[&str]) -> Result<Vec<Vec<f64>>> {
        names
            .iter()
            .map(|n| {
                self.get(n)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::InvalidScores(format!("unknown model `{n}`")))
            })
            .collect()
    }
}

/// The non-dominated members of a score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoSet {
    pub names: Vec<String>,
    pub points: Vec<Vec<f64>>,
}

impl ParetoSet {
    pub fn hypervolume(&self) -> Result<f64> {
        let d = self.points.first().map_or(1, Vec::len);
        hypervolume(&self.points, &ReferencePoint::origin(d))
    }
}

/// Reference point of the hypervolume. Scores are normalized, so this is the
/// origin in practice.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint(Vec<f64>);

impl ReferencePoint {
    pub fn origin(d: usize) -> Self {
        ReferencePoint(vec![0.0; d])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

/// `a` weakly dominates `b` everywhere and strictly somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        strict |= x > y;
    }
    strict
}

/// Indices of the points no other point dominates. Duplicates of a
/// non-dominated point are all kept.
pub fn non_dominated(points: &[Vec<f64>]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect()
}

pub fn pareto_filter(table: &ScoreTable) -> ParetoSet {
    let points: Vec<Vec<f64>> = table.rows.iter().map(|(_, v)| v.clone()).collect();
    let keep = non_dominated(&points);
    ParetoSet {
        names: keep.iter().map(|&i| table.rows[i].0.clone()).collect(),
        points: keep.iter().map(|&i| points[i].clone()).collect(),
    }
}

/// Exact hypervolume dominated by `points` with respect to `reference`.
///
/// Dimension sweep: slice along the last objective and integrate the
/// `(d-1)`-dimensional hypervolume of the points above each slice. Dominated
/// and duplicate points are dropped first, so any superset of the Pareto
/// front may be passed in.
pub fn hypervolume(points: &[Vec<f64>], reference: &ReferencePoint) -> Result<f64> {
    let d = reference.0.len();
    if d == 0 {
        return Err(Error::InvalidScores("hypervolume needs at least one dimension".into()));
    }
    let mut shifted = Vec::with_capacity(points.len());
    for p in points {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                context: "hypervolume point".into(),
                expected: d,
                found: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("hypervolume point".into()));
        }
        let s: Vec<f64> = p.iter().zip(&reference.0).map(|(x, r)| x - r).collect();
        if s.iter().any(|&v| v < 0.0) {
            return Err(Error::OutOfRange {
                what: "coordinate relative to the reference point",
                value: s.iter().copied().fold(f64::INFINITY, f64::min),
                range: "[0, inf)",
            });
        }
        // boxes with an empty side contribute nothing
        if s.iter().all(|&v| v > 0.0) {
            shifted.push(s);
        }
    }
    Ok(sweep(shifted, d))
}

/// Last coordinate descending, then the remaining coordinates descending.
/// Total on distinct points, which makes the summation order canonical.
fn sweep_order(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .rev()
        .zip(b.iter().rev())
        .map(|(x, y)| y.total_cmp(x))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn prune(points: &mut Vec<Vec<f64>>) {
    points.sort_by(|a, b| sweep_order(a, b));
    points.dedup();
    let keep = non_dominated(points);
    if keep.len() != points.len() {
        let mut i = 0;
        points.retain(|_| {
            let k = keep.binary_search(&i).is_ok();
            i += 1;
            k
        });
    }
}

fn sweep(mut points: Vec<Vec<f64>>, d: usize) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    if d == 1 {
        return points.iter().map(|p| p[0]).fold(0.0, f64::max);
    }
    prune(&mut points);
    if d == 2 {
        // staircase: points sorted by y descending have increasing x
        let mut area = 0.0;
        for (k, p) in points.iter().enumerate() {
            let next = points.get(k + 1).map_or(0.0, |q| q[1]);
            area += p[0] * (p[1] - next);
        }
        return area;
    }
    let mut volume = 0.0;
    let mut slice: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    for k in 0..points.len() {
        slice.push(points[k][..d - 1].to_vec());
        let top = points[k][d - 1];
        let next = points.get(k + 1).map_or(0.0, |q| q[d - 1]);
        if top > next {
            prune(&mut slice);
            volume += (top - next) * sweep(slice.clone(), d - 1);
        }
    }
    volume
}

/// Hypervolume of a population before and after adding one merged model,
/// and the resulting gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvReport {
    pub hv_base: f64,
    pub hv_with_merged: f64,
    pub hv_gain: f64,
}

/// `(HV(front(population + merged)) - HV(front(population)))^(1/d)`, with
/// negative round-off clamped to zero.
pub fn hv_gain(population: &[Vec<f64>], merged: &[f64]) -> Result<HvReport> {
    let d = merged.len();
    if d == 0 {
        return Err(Error::InvalidScores("merged score vector is empty".into()));
    }
    for p in population.iter().map(Vec::as_slice).chain(core::iter::once(merged)) {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                context: "score vector".into(),
                expected: d,
                found: p.len(),
            });
        }
        if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidScores(format!("score {v} outside [0, 1]")));
        }
    }
    let reference = ReferencePoint::origin(d);
    let hv_base = hypervolume(population, &reference)?;
    let mut extended = population.to_vec();
    extended.push(merged.to_vec());
    let hv_with_merged = hypervolume(&extended, &reference)?;
    let diff = (hv_with_merged - hv_base).max(0.0);
    let hv_gain = if diff > 0.0 {
        libm::pow(diff, 1.0 / d as f64)
    } else {
        0.0
    };
    Ok(HvReport {
        hv_base,
        hv_with_merged,
        hv_gain,
    })
}
