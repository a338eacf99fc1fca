//! Gradient-based voxel selection and its baseline samplers.
//!
//! For a scene, the location loss of a frozen early-stage and a frozen
//! late-stage detector is differentiated down to every input point; each
//! voxel's gradient magnitude is the mean, over its sampled points, of the
//! Euclidean norm of that point's per-channel gradient vector. A threshold
//! mechanism per stage picks the meaningful voxels, the two sets merge by
//! union, and a budget of `round(nu_vs * n_v)` voxels is enforced by evicting
//! non-late voxels in ascending early-magnitude order.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{DiffGraph, InputKey, NodeId};
use crate::detector::{build_location_loss, DetectorSnapshot, POINT_CHANNELS};
use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::seed::rng_from;
use crate::voxelizer::{VoxelIndex, VoxelLabel, VoxelSet};

/// Per-voxel gradient magnitudes of the early and late stage, aligned with
/// the canonical voxel order they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMagnitudes {
    pub indices: Vec<VoxelIndex>,
    pub early: Vec<f64>,
    pub late: Vec<f64>,
}

impl GradientMagnitudes {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Threshold mechanism for one detector stage. `TopK` may carry its own
/// late/early budget ratio; without one it falls back to the config's
/// `nu_idr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mechanism {
    Mean,
    Median,
    TopK(Option<f64>),
}

impl Mechanism {
    fn ratio_or(&self, default: f64) -> f64 {
        match self {
            Mechanism::TopK(Some(r)) => *r,
            _ => default,
        }
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mechanism> {
        match s {
            "mean" => Ok(Mechanism::Mean),
            "median" => Ok(Mechanism::Median),
            "topk" => Ok(Mechanism::TopK(None)),
            other => {
                if let Some(ratio) = other.strip_prefix("topk:") {
                    let r: f64 = ratio
                        .parse()
                        .map_err(|e| Error::Config(format!("topk ratio {ratio:?}: {e}")))?;
                    if !(0.0..=1.0).contains(&r) {
                        return Err(Error::Config(format!("topk ratio {r} outside [0, 1]")));
                    }
                    Ok(Mechanism::TopK(Some(r)))
                } else {
                    Err(Error::Config(format!(
                        "unknown mechanism {other:?} (expected mean, median, topk, topk:<ratio>)"
                    )))
                }
            }
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mechanism::Mean => write!(f, "mean"),
            Mechanism::Median => write!(f, "median"),
            Mechanism::TopK(None) => write!(f, "topk"),
            Mechanism::TopK(Some(r)) => write!(f, "topk:{r}"),
        }
    }
}

impl Serialize for Mechanism {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Mechanism {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Mechanism::from_str(&s).map_err(serde::de::Error::custom)
    }
}

/// Selection hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Fraction of input voxels retained: `n_vs / n_v`.
    pub nu_vs: f64,
    /// Fraction of the selection budget allotted to the late top-k set:
    /// `k = round(nu_idr * n_vs)`.
    pub nu_idr: f64,
    pub early_mechanism: Mechanism,
    pub late_mechanism: Mechanism,
    /// Seed for the baseline samplers only.
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            nu_vs: 0.8,
            nu_idr: 50.0 / 80.0,
            early_mechanism: Mechanism::Mean,
            late_mechanism: Mechanism::TopK(None),
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu_vs > 0.0 && self.nu_vs <= 1.0) {
            return Err(Error::Config(format!("nu_vs {} outside (0, 1]", self.nu_vs)));
        }
        if !(0.0..=1.0).contains(&self.nu_idr) {
            return Err(Error::Config(format!(
                "nu_idr {} outside [0, 1]",
                self.nu_idr
            )));
        }
        Ok(())
    }
}

/// Output of a selection pass over one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub s_early: BTreeSet<VoxelIndex>,
    pub s_late: BTreeSet<VoxelIndex>,
    /// `s_late U s_early`, budget-capped.
    pub s_merged: BTreeSet<VoxelIndex>,
    pub magnitudes: GradientMagnitudes,
    pub config: SelectionConfig,
    /// Resolved voxel budget `round(nu_vs * n_v)`.
    pub n_vs: usize,
    /// Resolved late top-k size.
    pub k_late: usize,
    /// Both location losses were identically zero; the result fell back to
    /// the late top-`n_vs` prefix.
    pub degenerate: bool,
}

/// Round-half-up for non-negative budgets.
fn round_count(x: f64) -> usize {
    x.round() as usize
}

/// Per-voxel gradient magnitude from a differentiated loss graph: mean over
/// the voxel's sampled points of the Euclidean norm of the per-channel
/// gradient vector.
///
/// Every (voxel, slot, channel) of `voxel_set` must be registered in the
/// graph; a missing entry is a contract violation.
pub fn voxel_gradient_magnitude(graph: &DiffGraph, voxel_set: &VoxelSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(voxel_set.len());
    for voxel in &voxel_set.voxels {
        let n = voxel.n_points();
        let mut acc = 0.0f64;
        for slot in 0..n {
            let mut sq = 0.0f64;
            for channel in 0..POINT_CHANNELS {
                let key = InputKey {
                    voxel: voxel.index.0,
                    slot: slot as u16,
                    channel: channel as u8,
                };
                let node = graph.input_node(key).ok_or_else(|| {
                    Error::Contract(format!(
                        "no gradient entry for voxel {} slot {slot} channel {channel}",
                        voxel.index
                    ))
                })?;
                let g = graph.adjoint(node);
                sq += g * g;
            }
            acc += sq.sqrt();
        }
        out.push(acc / n as f64);
    }
    Ok(out)
}

/// Voxels whose value is at or above the arithmetic mean of the map.
pub fn select_mean(values: &[(VoxelIndex, f64)]) -> Result<BTreeSet<VoxelIndex>> {
    if values.is_empty() {
        return Err(Error::Contract("select_mean on an empty value map".into()));
    }
    let mean = values.iter().map(|(_, v)| v).sum::<f64>() / values.len() as f64;
    Ok(values
        .iter()
        .filter(|(_, v)| *v >= mean)
        .map(|(i, _)| *i)
        .collect())
}

/// Voxels whose value is at or above the (lower, for even counts) median.
pub fn select_median(values: &[(VoxelIndex, f64)]) -> Result<BTreeSet<VoxelIndex>> {
    if values.is_empty() {
        return Err(Error::Contract(
            "select_median on an empty value map".into(),
        ));
    }
    let mut sorted: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let median = sorted[(sorted.len() - 1) / 2];
    Ok(values
        .iter()
        .filter(|(_, v)| *v >= median)
        .map(|(i, _)| *i)
        .collect())
}

/// The `min(k, n)` voxels with the largest values; ties prefer the
/// lexicographically smaller voxel index.
pub fn select_topk(values: &[(VoxelIndex, f64)], k: usize) -> BTreeSet<VoxelIndex> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b].1
            .partial_cmp(&values[a].1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| values[a].0.cmp(&values[b].0))
    });
    order
        .into_iter()
        .take(k.min(values.len()))
        .map(|i| values[i].0)
        .collect()
}

fn apply_mechanism(
    mechanism: Mechanism,
    values: &[(VoxelIndex, f64)],
    k: usize,
) -> Result<BTreeSet<VoxelIndex>> {
    match mechanism {
        Mechanism::Mean => select_mean(values),
        Mechanism::Median => select_median(values),
        Mechanism::TopK(_) => Ok(select_topk(values, k)),
    }
}

/// Pure selection core over precomputed magnitudes.
///
/// `degenerate` marks scenes whose location losses were identically zero in
/// both stages; the result then falls back to the top-`n_vs` voxels by late
/// magnitude (the canonical-order prefix when everything is zero).
pub fn select_from_magnitudes(
    magnitudes: GradientMagnitudes,
    config: &SelectionConfig,
    degenerate: bool,
) -> Result<SelectionResult> {
    config.validate()?;
    let n_v = magnitudes.len();
    let n_vs = round_count(config.nu_vs * n_v as f64).min(n_v);
    let late_values: Vec<(VoxelIndex, f64)> = magnitudes
        .indices
        .iter()
        .copied()
        .zip(magnitudes.late.iter().copied())
        .collect();
    let early_values: Vec<(VoxelIndex, f64)> = magnitudes
        .indices
        .iter()
        .copied()
        .zip(magnitudes.early.iter().copied())
        .collect();
    let k_late = round_count(config.late_mechanism.ratio_or(config.nu_idr) * n_vs as f64);

    if n_v == 0 {
        return Ok(SelectionResult {
            s_early: BTreeSet::new(),
            s_late: BTreeSet::new(),
            s_merged: BTreeSet::new(),
            magnitudes,
            config: *config,
            n_vs,
            k_late,
            degenerate: true,
        });
    }

    if degenerate {
        let fallback = select_topk(&late_values, n_vs);
        return Ok(SelectionResult {
            s_early: BTreeSet::new(),
            s_late: fallback.clone(),
            s_merged: fallback,
            magnitudes,
            config: *config,
            n_vs,
            k_late,
            degenerate: true,
        });
    }

    let s_late = apply_mechanism(config.late_mechanism, &late_values, k_late)?;
    let k_early = round_count(config.early_mechanism.ratio_or(config.nu_idr) * n_vs as f64);
    let s_early = apply_mechanism(config.early_mechanism, &early_values, k_early)?;

    let mut s_merged: BTreeSet<VoxelIndex> = s_late.union(&s_early).copied().collect();
    if s_merged.len() > n_vs {
        // Evict non-late voxels in ascending early-magnitude order, ties in
        // canonical index order, until the budget holds. The late set is
        // never evicted, so the budget can only be enforced down to its size.
        let mut evictable: Vec<(VoxelIndex, f64)> = early_values
            .iter()
            .filter(|(i, _)| s_merged.contains(i) && !s_late.contains(i))
            .copied()
            .collect();
        evictable.sort_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        for (idx, _) in evictable {
            if s_merged.len() <= n_vs {
                break;
            }
            s_merged.remove(&idx);
        }
    }

    Ok(SelectionResult {
        s_early,
        s_late,
        s_merged,
        magnitudes,
        config: *config,
        n_vs,
        k_late,
        degenerate: false,
    })
}

/// Rebinds the parameter leaves (nodes `0..n`) of a built loss graph.
fn rebind_params(graph: &mut DiffGraph, theta: &[f64]) -> Result<()> {
    for (i, v) in theta.iter().enumerate() {
        graph.set_value(NodeId(i as u32), *v)?;
    }
    Ok(())
}

/// The full selection pass for one scene: location-loss gradients under the
/// frozen early and late snapshots, per-voxel magnitudes, per-stage
/// mechanisms, union merge, and budget enforcement.
pub fn gravos_select(
    voxel_set: &VoxelSet,
    scene: &Scene,
    early: &DetectorSnapshot,
    late: &DetectorSnapshot,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    config.validate()?;
    if early.params.arch != late.params.arch {
        return Err(Error::Contract(
            "early and late snapshots have different architectures".into(),
        ));
    }
    if voxel_set.is_empty() {
        return select_from_magnitudes(
            GradientMagnitudes {
                indices: vec![],
                early: vec![],
                late: vec![],
            },
            config,
            true,
        );
    }

    // Early pass; the graph topology only depends on the voxel structure, so
    // the late pass reuses it with rebound parameters.
    let mut built = build_location_loss(voxel_set, scene, &early.params)?;
    let loss_early = built.forward.graph.value(built.loss);
    built.forward.graph.backward_unchecked();
    let g_early = voxel_gradient_magnitude(&built.forward.graph, voxel_set)?;

    rebind_params(&mut built.forward.graph, &late.params.theta)?;
    let loss_late = built.forward.graph.forward_unchecked();
    built.forward.graph.backward_unchecked();
    let g_late = voxel_gradient_magnitude(&built.forward.graph, voxel_set)?;

    let degenerate = loss_early == 0.0 && loss_late == 0.0;
    select_from_magnitudes(
        GradientMagnitudes {
            indices: voxel_set.indices().collect(),
            early: g_early,
            late: g_late,
        },
        config,
        degenerate,
    )
}

/// Efraimidis–Spirakis weighted reservoir sampling without replacement:
/// ranks items by `u^(1/w)` (computed as `ln(u)/w`) and keeps the `k`
/// largest. With equal weights this reduces to a uniform sample, with the
/// same output for the same seed regardless of the shared weight value.
pub fn weighted_sample_without_replacement<R: rand::Rng>(
    indices: &[VoxelIndex],
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> BTreeSet<VoxelIndex> {
    assert_eq!(indices.len(), weights.len());
    let mut keyed: Vec<(f64, VoxelIndex)> = indices
        .iter()
        .zip(weights)
        .map(|(idx, w)| {
            let u: f64 = rng.random();
            (u.ln() / w, *idx)
        })
        .collect();
    keyed.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.1.cmp(&b.1))
    });
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Uniform voxel dropout: a seed-deterministic sample of
/// `round(ratio * n_v)` voxels.
pub fn dropout_select(voxel_set: &VoxelSet, ratio: f64, seed: u64) -> Result<BTreeSet<VoxelIndex>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("dropout ratio {ratio} outside (0, 1]")));
    }
    let indices: Vec<VoxelIndex> = voxel_set.indices().collect();
    let weights = vec![1.0; indices.len()];
    let k = round_count(ratio * indices.len() as f64).min(indices.len());
    let mut rng = rng_from(seed);
    Ok(weighted_sample_without_replacement(
        &indices, &weights, k, &mut rng,
    ))
}

fn check_labels_cover(voxel_set: &VoxelSet, labels: &[VoxelLabel]) -> Result<()> {
    if labels.len() != voxel_set.len()
        || !voxel_set
            .indices()
            .zip(labels)
            .all(|(i, l)| i == l.index)
    {
        return Err(Error::Contract(
            "labels do not cover the voxel set".into(),
        ));
    }
    Ok(())
}

/// Keeps every foreground voxel and uniformly down-samples background until
/// the total budget `round(ratio * n_v)` is met. When foreground alone
/// exceeds the budget, all foreground is kept (exceeding the budget).
pub fn bg_sampling_select(
    voxel_set: &VoxelSet,
    labels: &[VoxelLabel],
    ratio: f64,
    seed: u64,
) -> Result<BTreeSet<VoxelIndex>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!(
            "bg-sampling ratio {ratio} outside (0, 1]"
        )));
    }
    check_labels_cover(voxel_set, labels)?;
    let budget = round_count(ratio * voxel_set.len() as f64).min(voxel_set.len());
    let mut kept: BTreeSet<VoxelIndex> = labels
        .iter()
        .filter(|l| l.label.is_some())
        .map(|l| l.index)
        .collect();
    if kept.len() >= budget {
        return Ok(kept);
    }
    let bg: Vec<VoxelIndex> = labels
        .iter()
        .filter(|l| l.label.is_none())
        .map(|l| l.index)
        .collect();
    let weights = vec![1.0; bg.len()];
    let mut rng = rng_from(seed);
    let extra = weighted_sample_without_replacement(&bg, &weights, budget - kept.len(), &mut rng);
    kept.extend(extra);
    Ok(kept)
}

/// Weighted sampling with per-voxel keep weight proportional to the inverse
/// frequency of its label within the scene.
pub fn inv_freq_sampling_select(
    voxel_set: &VoxelSet,
    labels: &[VoxelLabel],
    ratio: f64,
    seed: u64,
) -> Result<BTreeSet<VoxelIndex>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!(
            "inv-freq ratio {ratio} outside (0, 1]"
        )));
    }
    check_labels_cover(voxel_set, labels)?;
    let mut counts: std::collections::BTreeMap<&'static str, usize> = Default::default();
    for l in labels {
        *counts.entry(l.name()).or_insert(0) += 1;
    }
    let indices: Vec<VoxelIndex> = labels.iter().map(|l| l.index).collect();
    let weights: Vec<f64> = labels.iter().map(|l| 1.0 / counts[l.name()] as f64).collect();
    let k = round_count(ratio * indices.len() as f64).min(indices.len());
    let mut rng = rng_from(seed);
    Ok(weighted_sample_without_replacement(
        &indices, &weights, k, &mut rng,
    ))
}

/// Selection export: `i,j,k,G_early,G_late,in_Se,in_Sl,in_Smf` per voxel.
pub fn selection_csv(result: &SelectionResult) -> String {
    let mut out = String::from("i,j,k,G_early,G_late,in_Se,in_Sl,in_Smf\n");
    for (row, idx) in result.magnitudes.indices.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            idx.0[0],
            idx.0[1],
            idx.0[2],
            result.magnitudes.early[row],
            result.magnitudes.late[row],
            u8::from(result.s_early.contains(idx)),
            u8::from(result.s_late.contains(idx)),
            u8::from(result.s_merged.contains(idx)),
        ));
    }
    out
}
