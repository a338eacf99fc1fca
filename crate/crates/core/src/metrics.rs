//! Detection evaluation: rotated BEV/3D IoU, interpolated average precision
//! over 40 recall points, and non-maximum suppression.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Box3D, ClassId};

/// Intersection areas below this are treated as empty; guards degenerate
/// slivers from the polygon clipper.
const MIN_AREA: f64 = 1e-12;

/// Recall grid size of the interpolated AP metric.
pub const RECALL_POINTS: usize = 40;

/// Per-class matching thresholds and the IoU mode used for matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchConfig {
    /// IoU thresholds indexed by [`ClassId::index`]; defaults 0.7 / 0.5 / 0.5
    /// for Car / Pedestrian / Cyclist.
    pub iou_thresholds: [f64; 3],
    pub mode: IouMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    ThreeD,
    Bev,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            iou_thresholds: [0.7, 0.5, 0.5],
            mode: IouMode::ThreeD,
        }
    }
}

impl MatchConfig {
    pub fn threshold(&self, class: ClassId) -> f64 {
        self.iou_thresholds[class.index()]
    }

    pub fn validate(&self) -> Result<()> {
        for t in self.iou_thresholds {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!("IoU threshold {t} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// One point of a precision/recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PRPoint {
    pub recall: f64,
    pub precision: f64,
}

/// A scored detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub class_id: ClassId,
    /// Softmax probability of the predicted class.
    pub score: f64,
}

fn shoelace_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let j = (i + 1) % poly.len();
        acc += poly[i][0] * poly[j][1] - poly[j][0] * poly[i][1];
    }
    acc.abs() / 2.0
}

/// Clips a convex polygon against the half-plane on the left of `a -> b`.
fn clip_halfplane(poly: &[[f64; 2]], a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        let (sc, sn) = (side(cur), side(next));
        if sc >= 0.0 {
            out.push(cur);
        }
        if (sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0) {
            let t = sc / (sc - sn);
            out.push([
                cur[0] + t * (next[0] - cur[0]),
                cur[1] + t * (next[1] - cur[1]),
            ]);
        }
    }
    out
}

/// Intersection area of two convex polygons given in counterclockwise order.
fn convex_intersection_area(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let mut poly = a.to_vec();
    for i in 0..b.len() {
        if poly.len() < 3 {
            return 0.0;
        }
        poly = clip_halfplane(&poly, b[i], b[(i + 1) % b.len()]);
    }
    let area = shoelace_area(&poly);
    if area < MIN_AREA {
        0.0
    } else {
        area
    }
}

/// Bird's-eye-view IoU of two yaw-rotated boxes.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = convex_intersection_area(&a.bev_corners(), &b.bev_corners());
    let area_a = a.length * a.width;
    let area_b = b.length * b.width;
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// 3D IoU: BEV intersection times vertical overlap, over the volume union.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter_area = convex_intersection_area(&a.bev_corners(), &b.bev_corners());
    let (az0, az1) = a.z_interval();
    let (bz0, bz1) = b.z_interval();
    let dz = (az1.min(bz1) - az0.max(bz0)).max(0.0);
    let inter = inter_area * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

fn iou(mode: IouMode, a: &Box3D, b: &Box3D) -> f64 {
    match mode {
        IouMode::ThreeD => iou_3d(a, b),
        IouMode::Bev => iou_bev(a, b),
    }
}

/// Detections paired with the ground truth of one scene. AP evaluation pools
/// several of these; matching never crosses scene boundaries.
#[derive(Debug, Clone, Default)]
pub struct SceneEval {
    pub detections: Vec<Detection>,
    pub gt_boxes: Vec<Box3D>,
}

/// Interpolated average precision over the 40-point recall grid.
///
/// Detections are sorted by descending score (ties keep input order, which is
/// the canonical box order); each is greedily matched to the highest-IoU
/// unmatched ground-truth box of the same class at or above the class
/// threshold. Callers normally pass the detections and boxes of one class.
///
/// Errors with [`Error::UndefinedAp`] when `gts` is empty: recall is
/// undefined, and that is reported as absent, never as zero.
pub fn average_precision(dets: &[Detection], gts: &[Box3D], config: &MatchConfig) -> Result<f64> {
    let scene = SceneEval {
        detections: dets.to_vec(),
        gt_boxes: gts.to_vec(),
    };
    average_precision_pooled(std::slice::from_ref(&scene), config)
}

/// AP over a pool of scenes: one score ranking across all scenes, matching
/// confined within each scene.
pub fn average_precision_pooled(scenes: &[SceneEval], config: &MatchConfig) -> Result<f64> {
    config.validate()?;
    let curve = pr_curve_pooled(scenes, config)?;
    Ok(ap_from_curve(&curve))
}

/// Evaluates Eq.-style interpolated AP on an explicit PR curve.
pub fn ap_from_curve(curve: &[PRPoint]) -> f64 {
    let mut total = 0.0;
    for j in 1..=RECALL_POINTS {
        let r = j as f64 / RECALL_POINTS as f64;
        let mut best = 0.0f64;
        for p in curve {
            if p.recall >= r && p.precision > best {
                best = p.precision;
            }
        }
        total += best;
    }
    total / RECALL_POINTS as f64
}

/// Builds the raw PR curve (one point per detection, score-descending) for a
/// pool of scenes.
pub fn pr_curve_pooled(scenes: &[SceneEval], config: &MatchConfig) -> Result<Vec<PRPoint>> {
    let n_gt: usize = scenes.iter().map(|s| s.gt_boxes.len()).sum();
    if n_gt == 0 {
        return Err(Error::UndefinedAp(String::new()));
    }
    // (scene, det index) ranked by score descending; stable sort keeps the
    // canonical order on ties.
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (si, s) in scenes.iter().enumerate() {
        for di in 0..s.detections.len() {
            order.push((si, di));
        }
    }
    order.sort_by(|a, b| {
        let sa = scenes[a.0].detections[a.1].score;
        let sb = scenes[b.0].detections[b.1].score;
        sb.partial_cmp(&sa).unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut matched: Vec<Vec<bool>> = scenes.iter().map(|s| vec![false; s.gt_boxes.len()]).collect();
    let mut curve = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for (si, di) in order {
        let det = &scenes[si].detections[di];
        let threshold = config.threshold(det.class_id);
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in scenes[si].gt_boxes.iter().enumerate() {
            if matched[si][gi] || gt.class_id != det.class_id {
                continue;
            }
            let v = iou(config.mode, &det.bbox, gt);
            if v >= threshold && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            matched[si][gi] = true;
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push(PRPoint {
            recall: tp as f64 / n_gt as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(curve)
}

/// Arithmetic mean over classes whose AP is defined.
pub fn map_over_classes(per_class: &BTreeMap<ClassId, Option<f64>>) -> Result<f64> {
    let defined: Vec<f64> = per_class.values().filter_map(|v| *v).collect();
    if defined.is_empty() {
        return Err(Error::UndefinedAp(" in any class".into()));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Greedy BEV non-maximum suppression over same-class detections.
///
/// Returns the indices of kept detections. Candidates are visited in
/// score-descending order (ties keep input order); a candidate is suppressed
/// when its BEV IoU with any kept detection exceeds `nms_iou`.
pub fn nms_bev(dets: &[Detection], nms_iou: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| iou_bev(&dets[i].bbox, &dets[k].bbox) <= nms_iou)
        {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

/// PR curve rendered as CSV (`score,tp,fp,recall,precision`) for audits.
pub fn pr_curve_csv(scenes: &[SceneEval], config: &MatchConfig) -> Result<String> {
    let curve = pr_curve_pooled(scenes, config)?;
    let mut scores: Vec<f64> = Vec::new();
    for s in scenes {
        for d in &s.detections {
            scores.push(d.score);
        }
    }
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let n_gt: usize = scenes.iter().map(|s| s.gt_boxes.len()).sum();
    let mut out = String::from("score,tp,fp,recall,precision\n");
    for (i, p) in curve.iter().enumerate() {
        let tp = (p.recall * n_gt as f64).round() as usize;
        let fp = (i + 1) - tp;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            scores[i], tp, fp, p.recall, p.precision
        ));
    }
    Ok(out)
}
