//! Inference: decode per-voxel predictions into detections and prune them
//! with per-class BEV non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::detector::arch::{DetectorParams, N_LOGITS};
use crate::detector::network::forward_values;
use crate::error::Result;
use crate::metrics::{nms_bev, Detection};
use crate::scene::{Box3D, ClassId, Scene};
use crate::voxelizer::{voxelize, GridSpec, VoxelSet};

/// Log-ratio dim outputs are clamped to this magnitude before
/// exponentiation, keeping decoded boxes finite even from untrained heads.
const MAX_LOG_RATIO: f64 = 4.0;

/// Voxelization parameters used at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelizeOpts {
    pub max_points: usize,
    pub seed: u64,
}

impl Default for VoxelizeOpts {
    fn default() -> Self {
        VoxelizeOpts {
            max_points: 8,
            seed: 0,
        }
    }
}

/// Runs the detector on a prepared voxel set.
///
/// Each voxel whose best non-background softmax probability reaches
/// `score_threshold` decodes one candidate; candidates then pass per-class
/// BEV NMS at `nms_iou`, score-descending with ties kept in canonical voxel
/// order.
pub fn infer_on_voxel_set(
    voxel_set: &VoxelSet,
    scene: &Scene,
    params: &DetectorParams,
    score_threshold: f64,
    nms_iou: f64,
) -> Result<Vec<Detection>> {
    if voxel_set.is_empty() {
        return Ok(Vec::new());
    }
    let pred = forward_values(voxel_set, scene, params)?;
    let mut candidates: Vec<Detection> = Vec::new();
    for (voxel, row) in voxel_set.voxels.iter().zip(&pred.rows) {
        let probs = row.probabilities();
        // Background is the last logit; argmax over classes only.
        let (mut best, mut best_p) = (0usize, probs[0]);
        for (c, p) in probs.iter().enumerate().take(N_LOGITS - 1).skip(1) {
            if *p > best_p {
                best = c;
                best_p = *p;
            }
        }
        if best_p < score_threshold {
            continue;
        }
        let class = ClassId::ALL[best];
        let center = voxel_set.spec.cell_center(voxel.index);
        let r = row.residuals();
        let mean = params.arch.mean_dims[class.index()];
        let diag = crate::detector::loss::class_diagonal(&mean);
        let grow = |m: f64, log_ratio: f64| m * log_ratio.clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp();
        let bbox = Box3D::new(
            center[0] + r[0] * diag,
            center[1] + r[1] * diag,
            center[2] + r[2] * mean[2],
            grow(mean[0], r[3]),
            grow(mean[1], r[4]),
            grow(mean[2], r[5]),
            r[6],
            class,
        )?;
        candidates.push(Detection {
            bbox,
            class_id: class,
            score: best_p,
        });
    }

    let mut kept = Vec::new();
    for class in ClassId::ALL {
        let class_rows: Vec<usize> = (0..candidates.len())
            .filter(|&i| candidates[i].class_id == class)
            .collect();
        let class_dets: Vec<Detection> = class_rows.iter().map(|&i| candidates[i]).collect();
        for k in nms_bev(&class_dets, nms_iou) {
            kept.push(class_rows[k]);
        }
    }
    kept.sort_unstable();
    Ok(kept.into_iter().map(|i| candidates[i]).collect())
}

/// Voxelizes and runs the detector on a raw scene.
pub fn infer(
    scene: &Scene,
    grid: &GridSpec,
    params: &DetectorParams,
    vox: &VoxelizeOpts,
    score_threshold: f64,
    nms_iou: f64,
) -> Result<Vec<Detection>> {
    let vs = voxelize(scene, grid, vox.max_points, vox.seed)?;
    infer_on_voxel_set(&vs, scene, params, score_threshold, nms_iou)
}
