//! The forward pass, in two interchangeable forms: a differentiable graph
//! build and a plain-arithmetic evaluation. Both compute identical values;
//! the graph form exists so gradients reach the input points.

use crate::autodiff::{DiffGraph, InputKey, NodeId};
use crate::detector::arch::{DetectorParams, BOX_OUTPUTS, N_LOGITS, POINT_CHANNELS};
use crate::error::{Error, Result};
use crate::scene::{normalize_yaw, Scene};
use crate::voxelizer::VoxelSet;

/// Per-voxel output nodes of a graph forward pass.
#[derive(Debug, Clone)]
pub struct GraphRow {
    pub logits: [NodeId; N_LOGITS],
    pub box_raw: [NodeId; BOX_OUTPUTS],
}

/// A detector forward pass recorded on a [`DiffGraph`].
///
/// Parameter leaves occupy nodes `0..n_params` in layout order, so their
/// adjoints can be read back as one contiguous slice.
pub struct GraphForward {
    pub graph: DiffGraph,
    pub n_params: usize,
    pub rows: Vec<GraphRow>,
}

/// Per-voxel outputs of a value-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub logits: [f64; N_LOGITS],
    pub box_raw: [f64; BOX_OUTPUTS],
}

impl PredictionRow {
    /// Box residual vector (dx, dy, dz, dl, dw, dh, dyaw); yaw decodes from
    /// the raw sin/cos pair.
    pub fn residuals(&self) -> [f64; 7] {
        let mut r = [0.0; 7];
        r[..6].copy_from_slice(&self.box_raw[..6]);
        r[6] = normalize_yaw(self.box_raw[6].atan2(self.box_raw[7]));
        r
    }

    /// Softmax probabilities over the logits.
    pub fn probabilities(&self) -> [f64; N_LOGITS] {
        let m = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut e = [0.0; N_LOGITS];
        let mut sum = 0.0;
        for (i, l) in self.logits.iter().enumerate() {
            e[i] = (l - m).exp();
            sum += e[i];
        }
        for v in &mut e {
            *v /= sum;
        }
        e
    }
}

/// One prediction row per voxel, in canonical voxel order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub rows: Vec<PredictionRow>,
}

/// Point features fed to the encoder: voxel-center-relative coordinates plus
/// intensity.
fn point_features(scene: &Scene, point_index: u32, center: [f64; 3]) -> [f64; POINT_CHANNELS] {
    let p = &scene.points[point_index as usize];
    [p.x - center[0], p.y - center[1], p.z - center[2], p.intensity]
}

fn normalized_center(voxel_set: &VoxelSet, center: [f64; 3]) -> [f64; 3] {
    let ext = &voxel_set.spec.extent;
    let size = ext.size();
    [
        (center[0] - ext.min[0]) / size[0],
        (center[1] - ext.min[1]) / size[1],
        (center[2] - ext.min[2]) / size[2],
    ]
}

/// Value-mode per-point embedding: two tanh layers.
fn embed_point(params: &DetectorParams, x: &[f64; POINT_CHANNELS]) -> Vec<f64> {
    let arch = &params.arch;
    let l = arch.layout();
    let w1 = &params.theta[l.point_l1_w.0..l.point_l1_w.1];
    let b1 = &params.theta[l.point_l1_b.0..l.point_l1_b.1];
    let w2 = &params.theta[l.point_l2_w.0..l.point_l2_w.1];
    let b2 = &params.theta[l.point_l2_b.0..l.point_l2_b.1];
    let mut hidden = vec![0.0f64; arch.point_hidden];
    for h in 0..arch.point_hidden {
        let mut acc = b1[h];
        for c in 0..POINT_CHANNELS {
            acc += w1[h * POINT_CHANNELS + c] * x[c];
        }
        hidden[h] = acc.tanh();
    }
    let mut out = vec![0.0f64; arch.feature_dim];
    for f in 0..arch.feature_dim {
        let mut acc = b2[f];
        for h in 0..arch.point_hidden {
            acc += w2[f * arch.point_hidden + h] * hidden[h];
        }
        out[f] = acc.tanh();
    }
    out
}

/// Encodes one voxel's points (already voxel-center-relative) into its
/// feature vector: shared per-point embedding, elementwise max over points.
pub fn encode_voxel(points_rel: &[[f64; POINT_CHANNELS]], params: &DetectorParams) -> Vec<f64> {
    let mut feature = vec![f64::NEG_INFINITY; params.arch.feature_dim];
    for x in points_rel {
        let e = embed_point(params, x);
        for (f, v) in feature.iter_mut().zip(e) {
            if v > *f {
                *f = v;
            }
        }
    }
    feature
}

fn head_values(params: &DetectorParams, feature: &[f64], cnorm: [f64; 3]) -> PredictionRow {
    let arch = &params.arch;
    let l = arch.layout();
    let w1 = &params.theta[l.head_l1_w.0..l.head_l1_w.1];
    let b1 = &params.theta[l.head_l1_b.0..l.head_l1_b.1];
    let w2 = &params.theta[l.head_out_w.0..l.head_out_w.1];
    let b2 = &params.theta[l.head_out_b.0..l.head_out_b.1];
    let n_in = arch.head_input();
    let mut input = Vec::with_capacity(n_in);
    input.extend_from_slice(feature);
    input.extend_from_slice(&cnorm);
    let mut hidden = vec![0.0f64; arch.head_hidden];
    for h in 0..arch.head_hidden {
        let mut acc = b1[h];
        for (i, x) in input.iter().enumerate() {
            acc += w1[h * n_in + i] * x;
        }
        hidden[h] = if acc > 0.0 { acc } else { 0.0 };
    }
    let mut out = vec![0.0f64; arch.head_outputs()];
    for (o, slot) in out.iter_mut().enumerate() {
        let mut acc = b2[o];
        for (h, v) in hidden.iter().enumerate() {
            acc += w2[o * arch.head_hidden + h] * v;
        }
        *slot = acc;
    }
    let mut logits = [0.0; N_LOGITS];
    logits.copy_from_slice(&out[..N_LOGITS]);
    let mut box_raw = [0.0; BOX_OUTPUTS];
    box_raw.copy_from_slice(&out[N_LOGITS..]);
    PredictionRow { logits, box_raw }
}

/// Plain-arithmetic forward pass over every voxel.
pub fn forward_values(
    voxel_set: &VoxelSet,
    scene: &Scene,
    params: &DetectorParams,
) -> Result<Prediction> {
    params.validate()?;
    if voxel_set.is_empty() {
        return Err(Error::Contract("forward on an empty voxel set".into()));
    }
    let rows = voxel_set
        .voxels
        .iter()
        .map(|v| {
            let center = voxel_set.spec.cell_center(v.index);
            let rel: Vec<[f64; POINT_CHANNELS]> = v
                .point_indices
                .iter()
                .map(|&pi| point_features(scene, pi, center))
                .collect();
            let feature = encode_voxel(&rel, params);
            head_values(params, &feature, normalized_center(voxel_set, center))
        })
        .collect();
    Ok(Prediction { rows })
}

/// Builds the forward pass as a differentiable graph. Every point channel is
/// a registered input keyed by (voxel index, point slot, channel); parameters
/// are the first `n_params` leaf nodes.
pub fn build_forward_graph(
    voxel_set: &VoxelSet,
    scene: &Scene,
    params: &DetectorParams,
) -> Result<GraphForward> {
    params.validate()?;
    if voxel_set.is_empty() {
        return Err(Error::Contract("forward on an empty voxel set".into()));
    }
    let arch = &params.arch;
    let l = arch.layout();
    let n_points: usize = voxel_set.voxels.iter().map(|v| v.n_points()).sum();
    let per_point = arch.point_hidden * (2 * POINT_CHANNELS + 2)
        + arch.feature_dim * (2 * arch.point_hidden + 2);
    let per_voxel = arch.feature_dim * 5
        + arch.head_hidden * (2 * arch.head_input() + 2)
        + arch.head_outputs() * (2 * arch.head_hidden + 1);
    let mut graph = DiffGraph::with_capacity(
        l.total + n_points * (per_point + POINT_CHANNELS) + voxel_set.len() * per_voxel + 64,
    );

    let theta: Vec<NodeId> = params.theta.iter().map(|&v| graph.leaf(v)).collect();
    debug_assert_eq!(theta[0].0, 0);

    let mut rows = Vec::with_capacity(voxel_set.len());
    for voxel in &voxel_set.voxels {
        let center = voxel_set.spec.cell_center(voxel.index);

        // Per-point embeddings.
        let mut embeddings: Vec<Vec<NodeId>> = Vec::with_capacity(voxel.n_points());
        for (slot, &pi) in voxel.point_indices.iter().enumerate() {
            let feats = point_features(scene, pi, center);
            let mut x = [NodeId(0); POINT_CHANNELS];
            for (c, xi) in x.iter_mut().enumerate() {
                *xi = graph.input(
                    InputKey {
                        voxel: voxel.index.0,
                        slot: slot as u16,
                        channel: c as u8,
                    },
                    feats[c],
                )?;
            }
            let mut hidden = Vec::with_capacity(arch.point_hidden);
            for h in 0..arch.point_hidden {
                let mut acc = theta[l.point_l1_b.0 + h];
                for (c, xi) in x.iter().enumerate() {
                    let prod = graph.mul(theta[l.point_l1_w.0 + h * POINT_CHANNELS + c], *xi);
                    acc = graph.add(acc, prod);
                }
                hidden.push(graph.tanh(acc));
            }
            let mut emb = Vec::with_capacity(arch.feature_dim);
            for f in 0..arch.feature_dim {
                let mut acc = theta[l.point_l2_b.0 + f];
                for (h, hv) in hidden.iter().enumerate() {
                    let prod = graph.mul(theta[l.point_l2_w.0 + f * arch.point_hidden + h], *hv);
                    acc = graph.add(acc, prod);
                }
                emb.push(graph.tanh(acc));
            }
            embeddings.push(emb);
        }

        // Elementwise max pool.
        let mut feature = embeddings[0].clone();
        for emb in &embeddings[1..] {
            for (f, slot) in feature.iter_mut().enumerate() {
                *slot = graph.max2(*slot, emb[f]);
            }
        }

        // Head on [feature, normalized center].
        let cnorm = normalized_center(voxel_set, center);
        let mut head_in = feature;
        for c in cnorm {
            head_in.push(graph.constant(c));
        }
        let n_in = arch.head_input();
        let mut hidden = Vec::with_capacity(arch.head_hidden);
        for h in 0..arch.head_hidden {
            let mut acc = theta[l.head_l1_b.0 + h];
            for (i, xi) in head_in.iter().enumerate() {
                let prod = graph.mul(theta[l.head_l1_w.0 + h * n_in + i], *xi);
                acc = graph.add(acc, prod);
            }
            hidden.push(graph.relu(acc));
        }
        let mut out = Vec::with_capacity(arch.head_outputs());
        for o in 0..arch.head_outputs() {
            let mut acc = theta[l.head_out_b.0 + o];
            for (h, hv) in hidden.iter().enumerate() {
                let prod = graph.mul(theta[l.head_out_w.0 + o * arch.head_hidden + h], *hv);
                acc = graph.add(acc, prod);
            }
            out.push(acc);
        }
        let mut logits = [NodeId(0); N_LOGITS];
        logits.copy_from_slice(&out[..N_LOGITS]);
        let mut box_raw = [NodeId(0); BOX_OUTPUTS];
        box_raw.copy_from_slice(&out[N_LOGITS..]);
        rows.push(GraphRow { logits, box_raw });
    }

    Ok(GraphForward {
        graph,
        n_params: l.total,
        rows,
    })
}
