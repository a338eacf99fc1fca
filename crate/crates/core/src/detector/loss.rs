//! Training losses built on the forward graph.
//!
//! A voxel is *positive* when its cell center lies strictly inside a
//! ground-truth box (the first containing box in gt order wins). The location
//! loss is a smooth-L1 over the residual components of positive voxels;
//! classification is a background-down-weighted cross-entropy over all
//! voxels. Both reduce to a constant zero when they have nothing to average.

use crate::autodiff::{DiffGraph, NodeId};
use crate::detector::arch::{DetectorParams, BOX_OUTPUTS, N_LOGITS};
use crate::detector::network::{build_forward_graph, GraphForward};
use crate::error::Result;
use crate::scene::{Box3D, ClassId, Scene};
use crate::voxelizer::VoxelSet;

/// Location-loss components per positive voxel: 6 deltas + sin/cos of yaw.
pub const RESIDUAL_COMPONENTS: usize = BOX_OUTPUTS;

/// Regression targets of one positive voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRow {
    pub class: ClassId,
    /// (dx, dy, dz, dl, dw, dh) encoded against the voxel center and the
    /// class mean dims: center offsets normalized by the class BEV diagonal
    /// (height for dz), dims as log ratios. The normalization keeps residual
    /// scales comparable across classes.
    pub deltas: [f64; 6],
    pub sin_yaw: f64,
    pub cos_yaw: f64,
}

/// BEV diagonal of a class's mean dims; the center-offset normalizer.
pub fn class_diagonal(mean: &[f64; 3]) -> f64 {
    (mean[0] * mean[0] + mean[1] * mean[1]).sqrt()
}

/// Folds a yaw angle into `[-pi/2, pi/2)`. A box is invariant under a
/// half-turn, so the heading sign is unobservable from geometry; folding
/// keeps the sin/cos regression targets unambiguous.
pub fn fold_yaw(yaw: f64) -> f64 {
    let folded = yaw - std::f64::consts::PI * (yaw / std::f64::consts::PI + 0.5).floor();
    if folded >= std::f64::consts::FRAC_PI_2 {
        folded - std::f64::consts::PI
    } else {
        folded
    }
}

/// Encodes a box against a voxel center under the class mean dims.
pub fn encode_box_targets(bbox: &Box3D, center: [f64; 3], mean: &[f64; 3]) -> [f64; 6] {
    let diag = class_diagonal(mean);
    [
        (bbox.cx - center[0]) / diag,
        (bbox.cy - center[1]) / diag,
        (bbox.cz - center[2]) / mean[2],
        (bbox.length / mean[0]).ln(),
        (bbox.width / mean[1]).ln(),
        (bbox.height / mean[2]).ln(),
    ]
}

/// Per-voxel positive targets in canonical voxel order; `None` marks
/// background voxels. The first gt box (in list order) containing the voxel
/// center wins.
pub fn positive_targets(
    voxel_set: &VoxelSet,
    gt_boxes: &[Box3D],
    mean_dims: &[[f64; 3]; 3],
) -> Vec<Option<TargetRow>> {
    voxel_set
        .voxels
        .iter()
        .map(|v| {
            let center = voxel_set.spec.cell_center(v.index);
            let p = crate::scene::Point {
                x: center[0],
                y: center[1],
                z: center[2],
                intensity: 0.0,
            };
            gt_boxes.iter().find(|b| b.contains(&p)).map(|b| {
                let folded = fold_yaw(b.yaw);
                TargetRow {
                    class: b.class_id,
                    deltas: encode_box_targets(b, center, &mean_dims[b.class_id.index()]),
                    sin_yaw: folded.sin(),
                    cos_yaw: folded.cos(),
                }
            })
        })
        .collect()
}

/// Loss weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOpts {
    /// Localization weight in the total loss.
    pub lambda_location: f64,
    /// Background class weight in the cross-entropy mean.
    pub beta_background: f64,
}

impl Default for LossOpts {
    fn default() -> Self {
        LossOpts {
            lambda_location: 2.0,
            beta_background: 0.1,
        }
    }
}

/// A loss graph ready for backward passes.
pub struct BuiltLoss {
    pub forward: GraphForward,
    pub loss: NodeId,
    pub cls_loss: NodeId,
    pub loc_loss: NodeId,
    pub n_positive: usize,
}

/// Smooth-L1 with unit transition point, composed so the subgradient at the
/// kink stays correct under the tie-to-first-argument convention:
/// `0.5*min(|x|,1)^2 + |x| - min(|x|,1)`.
fn smooth_l1(g: &mut DiffGraph, x: NodeId, one: NodeId, half: NodeId) -> NodeId {
    let a = g.abs(x);
    let m = g.min2(a, one);
    let sq = g.square(m);
    let quad = g.mul(half, sq);
    let lin = g.sub(a, m);
    g.add(quad, lin)
}

/// Mean smooth-L1 over the residual components of positive voxels, as a graph
/// node. Zero constant when no voxel is positive.
pub fn location_loss_node(
    g: &mut DiffGraph,
    rows: &[crate::detector::network::GraphRow],
    targets: &[Option<TargetRow>],
) -> NodeId {
    let one = g.constant(1.0);
    let half = g.constant(0.5);
    let mut per_voxel: Vec<NodeId> = Vec::new();
    for (row, target) in rows.iter().zip(targets) {
        let Some(t) = target else { continue };
        let mut sum: Option<NodeId> = None;
        let push = |g: &mut DiffGraph, sum: &mut Option<NodeId>, pred: NodeId, tv: f64| {
            let tc = g.constant(tv);
            let d = g.sub(pred, tc);
            let sl = smooth_l1(g, d, one, half);
            *sum = Some(match *sum {
                None => sl,
                Some(s) => g.add(s, sl),
            });
        };
        for (i, &tv) in t.deltas.iter().enumerate() {
            push(g, &mut sum, row.box_raw[i], tv);
        }
        push(g, &mut sum, row.box_raw[6], t.sin_yaw);
        push(g, &mut sum, row.box_raw[7], t.cos_yaw);
        let scale = g.constant(1.0 / RESIDUAL_COMPONENTS as f64);
        let mean = g.mul(scale, sum.expect("residual components are non-empty"));
        per_voxel.push(mean);
    }
    if per_voxel.is_empty() {
        return g.constant(0.0);
    }
    let mut total = per_voxel[0];
    for v in &per_voxel[1..] {
        total = g.add(total, *v);
    }
    let scale = g.constant(1.0 / per_voxel.len() as f64);
    g.mul(scale, total)
}

/// Cross-entropy over voxel labels with the background weight `beta`,
/// normalized by the total weight.
pub fn classification_loss_node(
    g: &mut DiffGraph,
    rows: &[crate::detector::network::GraphRow],
    targets: &[Option<TargetRow>],
    beta: f64,
) -> NodeId {
    if rows.is_empty() {
        return g.constant(0.0);
    }
    let mut weighted: Vec<NodeId> = Vec::with_capacity(rows.len());
    let mut total_weight = 0.0;
    for (row, target) in rows.iter().zip(targets) {
        // Background is the last logit.
        let label = target.map_or(N_LOGITS - 1, |t| t.class.index());
        let weight = if target.is_some() { 1.0 } else { beta };
        // Stable log-sum-exp: m + log(sum exp(l - m)).
        let mut m = row.logits[0];
        for l in &row.logits[1..] {
            m = g.max2(m, *l);
        }
        let mut s: Option<NodeId> = None;
        for l in &row.logits {
            let d = g.sub(*l, m);
            let e = g.exp(d);
            s = Some(match s {
                None => e,
                Some(acc) => g.add(acc, e),
            });
        }
        let log_s = g.log(s.expect("logits are non-empty"));
        let lse = g.add(m, log_s);
        let ce = g.sub(lse, row.logits[label]);
        let w = g.constant(weight);
        weighted.push(g.mul(w, ce));
        total_weight += weight;
    }
    let mut total = weighted[0];
    for v in &weighted[1..] {
        total = g.add(total, *v);
    }
    let scale = g.constant(1.0 / total_weight);
    g.mul(scale, total)
}

/// Builds `classification + lambda * location` over a fresh forward graph and
/// designates it as the loss node.
pub fn build_total_loss(
    voxel_set: &VoxelSet,
    scene: &Scene,
    params: &DetectorParams,
    opts: &LossOpts,
) -> Result<BuiltLoss> {
    let targets = positive_targets(voxel_set, &scene.gt_boxes, &params.arch.mean_dims);
    let n_positive = targets.iter().flatten().count();
    let mut fwd = build_forward_graph(voxel_set, scene, params)?;
    let loc = location_loss_node(&mut fwd.graph, &fwd.rows, &targets);
    let cls = classification_loss_node(&mut fwd.graph, &fwd.rows, &targets, opts.beta_background);
    let lambda = fwd.graph.constant(opts.lambda_location);
    let weighted_loc = fwd.graph.mul(lambda, loc);
    let total = fwd.graph.add(cls, weighted_loc);
    fwd.graph.set_loss(total);
    Ok(BuiltLoss {
        forward: fwd,
        loss: total,
        cls_loss: cls,
        loc_loss: loc,
        n_positive,
    })
}

/// Builds the location loss alone; this is the loss the voxel-selection
/// gradients are taken from.
pub fn build_location_loss(
    voxel_set: &VoxelSet,
    scene: &Scene,
    params: &DetectorParams,
) -> Result<BuiltLoss> {
    let targets = positive_targets(voxel_set, &scene.gt_boxes, &params.arch.mean_dims);
    let n_positive = targets.iter().flatten().count();
    let mut fwd = build_forward_graph(voxel_set, scene, params)?;
    let loc = location_loss_node(&mut fwd.graph, &fwd.rows, &targets);
    fwd.graph.set_loss(loc);
    Ok(BuiltLoss {
        forward: fwd,
        loss: loc,
        cls_loss: loc,
        loc_loss: loc,
        n_positive,
    })
}
