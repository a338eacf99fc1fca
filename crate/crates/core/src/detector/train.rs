//! Detector training: one optimizer step per scene, seed-deterministic.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::detector::arch::{ArchConfig, DetectorParams};
use crate::detector::loss::{build_total_loss, LossOpts};
use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::seed::{derive_seed, rng_from};
use crate::voxelizer::{voxelize, GridSpec, VoxelSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    AdamLike,
    SgdStepDecay,
}

/// Step-decay learning-rate schedule: `initial * decay^(epoch / step_epochs)`
/// with integer division; `decay = 1` keeps the rate constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub step_epochs: usize,
}

impl LrSchedule {
    pub fn constant(initial: f64) -> LrSchedule {
        LrSchedule {
            initial,
            decay: 1.0,
            step_epochs: 1,
        }
    }

    pub fn at_epoch(&self, epoch_zero_based: usize) -> f64 {
        self.initial
            * self
                .decay
                .powi((epoch_zero_based / self.step_epochs.max(1)) as i32)
    }
}

/// Training configuration. The batch is always a single scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epoch after which the early snapshot is taken.
    pub early_epoch: usize,
    pub optimizer: OptimizerKind,
    pub lr: LrSchedule,
    /// Localization weight in the total loss.
    pub lambda_location: f64,
    /// Background weight in the classification loss.
    pub beta_background: f64,
    /// Per-voxel point cap used when this config drives voxelization.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            early_epoch: 1,
            optimizer: OptimizerKind::AdamLike,
            lr: LrSchedule {
                initial: 1e-2,
                decay: 0.5,
                step_epochs: 12,
            },
            lambda_location: 2.0,
            beta_background: 0.1,
            max_points: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.early_epoch && self.early_epoch < self.epochs) {
            return Err(Error::Config(format!(
                "need 1 <= early_epoch < epochs, got early_epoch {} epochs {}",
                self.early_epoch, self.epochs
            )));
        }
        if !(self.lr.initial > 0.0 && self.lr.initial.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_opts(&self) -> LossOpts {
        LossOpts {
            lambda_location: self.lambda_location,
            beta_background: self.beta_background,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Early,
    Late,
}

/// Detector parameters frozen at a training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSnapshot {
    pub params: DetectorParams,
    pub stage: Stage,
    pub epoch: usize,
}

/// Mean per-epoch losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub cls_loss: f64,
    pub loc_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub rows: Vec<LossRow>,
}

enum Optimizer {
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: u64,
    },
    Sgd,
}

impl Optimizer {
    fn new(kind: OptimizerKind, n: usize) -> Optimizer {
        match kind {
            OptimizerKind::AdamLike => Optimizer::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
            OptimizerKind::SgdStepDecay => Optimizer::Sgd,
        }
    }

    fn step(&mut self, theta: &mut [f64], grads: &[f64], lr: f64) {
        match self {
            Optimizer::Adam { m, v, t } => {
                const BETA1: f64 = 0.9;
                const BETA2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let bc1 = 1.0 - BETA1.powi(*t as i32);
                let bc2 = 1.0 - BETA2.powi(*t as i32);
                for i in 0..theta.len() {
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * grads[i];
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * grads[i] * grads[i];
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    theta[i] -= lr * mhat / (vhat.sqrt() + EPS);
                }
            }
            Optimizer::Sgd => {
                for i in 0..theta.len() {
                    theta[i] -= lr * grads[i];
                }
            }
        }
    }
}

/// A scene with its prepared voxel set.
pub type Prepared<'a> = (&'a Scene, &'a VoxelSet);

/// Whether the training loop keeps one loss graph per scene alive across
/// epochs (rebinding only the parameter leaves) or rebuilds per step. Both
/// modes produce bit-identical results; `Auto` caches while the estimated
/// footprint stays under a fixed budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphReuse {
    Auto,
    Always,
    Never,
}

/// Cached-graph budget for `GraphReuse::Auto`, in estimated node bytes.
const CACHE_BUDGET_BYTES: usize = 3_200_000_000;

/// Bytes per node across the arena vectors (op kind, args, value).
const NODE_BYTES: usize = 17;

fn estimated_nodes(scene: &Scene, vs: &VoxelSet, arch: &crate::detector::ArchConfig) -> usize {
    let points: usize = vs.voxels.iter().map(|v| v.n_points()).sum();
    let per_point = arch.point_hidden * (2 * crate::detector::POINT_CHANNELS + 2)
        + arch.feature_dim * (2 * arch.point_hidden + 2);
    let per_voxel = arch.feature_dim * 2
        + arch.head_hidden * (2 * arch.head_input() + 2)
        + arch.head_outputs() * (2 * arch.head_hidden + 1)
        + 80;
    let _ = scene;
    points * (per_point + 4) + vs.len() * per_voxel + arch.n_params()
}

/// Trains starting from `initial` over prepared (scene, voxel set) pairs,
/// taking parameter snapshots after each epoch listed in `snapshot_epochs`.
/// Scenes with empty voxel sets contribute nothing and are skipped.
///
/// Returns the snapshots (as bare parameter vectors keyed by epoch) and the
/// loss curve of per-epoch means.
pub fn train_on_prepared(
    prepared: &[Prepared<'_>],
    initial: DetectorParams,
    config: &TrainConfig,
    snapshot_epochs: &[usize],
) -> Result<(Vec<(usize, DetectorParams)>, LossCurve)> {
    train_on_prepared_with(prepared, initial, config, snapshot_epochs, GraphReuse::Auto)
}

/// [`train_on_prepared`] with explicit graph-reuse control.
pub fn train_on_prepared_with(
    prepared: &[Prepared<'_>],
    initial: DetectorParams,
    config: &TrainConfig,
    snapshot_epochs: &[usize],
    reuse: GraphReuse,
) -> Result<(Vec<(usize, DetectorParams)>, LossCurve)> {
    let mut params = initial;
    params.validate()?;
    let n = params.theta.len();
    let mut opt = Optimizer::new(config.optimizer, n);
    let opts = config.loss_opts();
    let mut curve = LossCurve::default();
    let mut snapshots = Vec::new();
    let usable: Vec<usize> = (0..prepared.len())
        .filter(|&i| !prepared[i].1.is_empty())
        .collect();
    if usable.is_empty() {
        return Err(Error::Contract(
            "training set has no non-empty voxel sets".into(),
        ));
    }

    let cache_graphs = match reuse {
        GraphReuse::Always => true,
        GraphReuse::Never => false,
        GraphReuse::Auto => {
            let estimate: usize = usable
                .iter()
                .map(|&i| estimated_nodes(prepared[i].0, prepared[i].1, &params.arch) * NODE_BYTES)
                .sum();
            estimate <= CACHE_BUDGET_BYTES
        }
    };
    let mut cache: Vec<Option<crate::detector::BuiltLoss>> = Vec::new();
    if cache_graphs {
        cache.resize_with(prepared.len(), || None);
    }

    for epoch in 1..=config.epochs {
        let mut order = usable.clone();
        let mut rng = rng_from(derive_seed(config.seed, "epoch-order", epoch as u64));
        order.shuffle(&mut rng);

        let (mut cls_sum, mut loc_sum, mut total_sum) = (0.0, 0.0, 0.0);
        for &si in &order {
            let (scene, vs) = prepared[si];
            let mut fresh;
            let built: &mut crate::detector::BuiltLoss = if cache_graphs {
                let slot = &mut cache[si];
                match slot {
                    Some(b) => {
                        for (i, v) in params.theta.iter().enumerate() {
                            b.forward.graph.set_value(crate::autodiff::NodeId(i as u32), *v)?;
                        }
                        b.forward.graph.forward_unchecked();
                        b
                    }
                    None => {
                        *slot = Some(build_total_loss(vs, scene, &params, &opts)?);
                        slot.as_mut().unwrap()
                    }
                }
            } else {
                fresh = Some(build_total_loss(vs, scene, &params, &opts)?);
                fresh.as_mut().unwrap()
            };
            let total = built.forward.graph.value(built.loss);
            if !total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    scene_id: scene.scene_id.clone(),
                    reason: format!("total loss {total}"),
                });
            }
            cls_sum += built.forward.graph.value(built.cls_loss);
            loc_sum += built.forward.graph.value(built.loc_loss);
            total_sum += total;
            built.forward.graph.backward_unchecked();
            let grads = built
                .forward
                .graph
                .adjoint_slice(crate::autodiff::NodeId(0), built.forward.n_params);
            opt.step(&mut params.theta, grads, config.lr.at_epoch(epoch - 1));
        }
        let k = order.len() as f64;
        curve.rows.push(LossRow {
            epoch,
            cls_loss: cls_sum / k,
            loc_loss: loc_sum / k,
            total: total_sum / k,
        });
        if snapshot_epochs.contains(&epoch) {
            snapshots.push((epoch, params.clone()));
        }
    }
    Ok((snapshots, curve))
}

/// Full pretraining entry point: voxelizes the scenes, initializes seeded
/// parameters, and returns the early and late snapshots plus the loss curve.
pub fn train(
    scenes: &[Scene],
    grid: &GridSpec,
    config: &TrainConfig,
) -> Result<(DetectorSnapshot, DetectorSnapshot, LossCurve)> {
    config.validate()?;
    let voxel_sets: Vec<VoxelSet> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            voxelize(
                s,
                grid,
                config.max_points,
                derive_seed(config.seed, "voxelize", i as u64),
            )
        })
        .collect::<Result<_>>()?;
    let prepared: Vec<Prepared<'_>> = scenes.iter().zip(voxel_sets.iter()).collect();
    let initial = DetectorParams::init(ArchConfig::default(), derive_seed(config.seed, "init", 0));
    let (mut snaps, curve) = train_on_prepared(
        &prepared,
        initial,
        config,
        &[config.early_epoch, config.epochs],
    )?;
    let late = snaps.pop().expect("late snapshot");
    let early = snaps.pop().expect("early snapshot");
    Ok((
        DetectorSnapshot {
            params: early.1,
            stage: Stage::Early,
            epoch: early.0,
        },
        DetectorSnapshot {
            params: late.1,
            stage: Stage::Late,
            epoch: late.0,
        },
        curve,
    ))
}
