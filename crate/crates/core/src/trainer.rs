//! End-to-end training pipeline: pretrain, snapshot, per-scene voxel
//! selection from the frozen snapshots, fine-tune on the selected voxels, and
//! evaluate against a full-voxel continued-training control. Also hosts the
//! ablation sweep driver and the class-balance report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{
    infer_on_voxel_set, save_snapshot, train_on_prepared, DetectorParams, DetectorSnapshot,
    LossCurve, LrSchedule, OptimizerKind, Stage, TrainConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{
    average_precision_pooled, map_over_classes, IouMode, MatchConfig, SceneEval,
};
use crate::scene::{generate_scene, load_labels, load_point_bin, ClassId, Scene, SynthConfig};
use crate::seed::derive_seed;
use crate::selector::{
    bg_sampling_select, dropout_select, gravos_select, inv_freq_sampling_select, selection_csv,
    GradientMagnitudes, Mechanism, SelectionConfig, SelectionResult,
};
use crate::voxelizer::{label_voxels, restrict, voxelize, GridSpec, VoxelLabel, VoxelSet};

/// Which selector feeds the fine-tune stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectorKind {
    Gravos,
    Dropout,
    BgSampling,
    InvFreqSampling,
}

/// Dataset source: generated on the fly or loaded from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        train_scenes: usize,
        eval_scenes: usize,
        synth: SynthConfig,
    },
    Files {
        train_dir: PathBuf,
        eval_dir: PathBuf,
    },
}

/// Fine-tuning shape: a first phase with the pretraining optimizer and a
/// second phase of step-decay SGD. Fine-tuning resumes a converged model, so
/// phase 1 runs at a later-stage (smaller) rate than pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub phase1_epochs: usize,
    pub phase1_lr: f64,
    pub phase2_epochs: usize,
    pub phase2_lr: LrSchedule,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            phase1_epochs: 20,
            phase1_lr: 3e-4,
            phase2_epochs: 10,
            phase2_lr: LrSchedule {
                initial: 1e-4,
                decay: 0.5,
                step_epochs: 4,
            },
        }
    }
}

/// Evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Per-class matching thresholds, indexed like [`ClassId::index`].
    pub iou_thresholds: [f64; 3],
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: [0.7, 0.5, 0.5],
            score_threshold: 0.95,
            nms_iou: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn match_config(&self, mode: IouMode) -> MatchConfig {
        MatchConfig {
            iou_thresholds: self.iou_thresholds,
            mode,
        }
    }
}

/// The full experiment recipe. All randomness derives from `seed`; the seeds
/// inside `pretrain` and `selection` are overwritten from it when the
/// pipeline starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub grid: GridSpec,
    pub pretrain: TrainConfig,
    pub selection: SelectionConfig,
    pub selector: SelectorKind,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::Synthetic {
                train_scenes: 200,
                eval_scenes: 50,
                synth: SynthConfig::default(),
            },
            grid: GridSpec::synthetic_default(),
            pretrain: TrainConfig::default(),
            selection: SelectionConfig::default(),
            selector: SelectorKind::Gravos,
            finetune: FinetuneConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
        }
    }
}

impl GridSpec {
    /// Grid used for the synthetic desk-scale scenes. Cells are sized
    /// comparably to the toy objects so a voxel's own points carry enough
    /// shape to localize from, which the per-voxel detector needs.
    pub fn synthetic_default() -> GridSpec {
        GridSpec {
            origin: [0.0, 0.0, 0.0],
            cell: [0.5, 0.5, 0.5],
            extent: crate::scene::Bounds {
                min: [-10.0, -10.0, -0.5],
                max: [10.0, 10.0, 2.5],
            },
        }
    }

    /// Grid for KITTI-format inputs (fine cells).
    pub fn kitti_default() -> GridSpec {
        GridSpec {
            origin: [0.0, -40.0, -3.0],
            cell: [0.05, 0.05, 0.1],
            extent: crate::scene::Bounds {
                min: [0.0, -40.0, -3.0],
                max: [70.4, 40.0, 1.0],
            },
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.pretrain.validate()?;
        self.selection.validate()?;
        if let DatasetConfig::Synthetic { train_scenes, .. } = &self.dataset {
            if *train_scenes == 0 {
                return Err(Error::Config("train_scenes must be positive".into()));
            }
        }
        Ok(())
    }

    fn resolved(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.pretrain.seed = derive_seed(self.seed, "pretrain", 0);
        c.selection.seed = derive_seed(self.seed, "selection", 0);
        c
    }
}

/// One prepared scene: the raw scene, its voxel set, and per-voxel labels.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub scene: Scene,
    pub voxels: VoxelSet,
    pub labels: Vec<VoxelLabel>,
}

/// Loaded and voxelized data for one experiment.
#[derive(Debug, Clone)]
pub struct PipelineData {
    pub train: Vec<PreparedScene>,
    pub eval: Vec<PreparedScene>,
    pub config: ExperimentConfig,
}

fn load_dataset_dir(dir: &Path) -> Result<Vec<Scene>> {
    let manifest = dir.join("manifest.csv");
    if !manifest.exists() {
        return Err(Error::Config(format!(
            "dataset manifest not found: {}",
            manifest.display()
        )));
    }
    let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut scenes = Vec::new();
    for line in text.lines().skip(1) {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        let mut scene = load_point_bin(&dir.join(format!("{id}.bin")))?;
        scene.scene_id = id.to_string();
        scene.gt_boxes = load_labels(&dir.join(format!("{id}.csv")))?;
        scenes.push(scene);
    }
    Ok(scenes)
}

/// Generates the synthetic scene list of one split.
pub fn synth_split(synth: &SynthConfig, count: usize, seed: u64, split: &str) -> Result<Vec<Scene>> {
    (0..count)
        .map(|i| {
            let mut cfg = synth.clone();
            cfg.seed = derive_seed(seed, split, i as u64);
            let mut scene = generate_scene(&cfg)?;
            scene.scene_id = format!("{split}_{i:04}");
            Ok(scene)
        })
        .collect()
}

/// Loads or generates all scenes and voxelizes both splits.
pub fn prepare(config: &ExperimentConfig) -> Result<PipelineData> {
    config.validate()?;
    let config = config.resolved();
    let (train_scenes, eval_scenes) = match &config.dataset {
        DatasetConfig::Synthetic {
            train_scenes,
            eval_scenes,
            synth,
        } => (
            synth_split(synth, *train_scenes, config.seed, "train")?,
            synth_split(synth, *eval_scenes, config.seed, "eval")?,
        ),
        DatasetConfig::Files {
            train_dir,
            eval_dir,
        } => (load_dataset_dir(train_dir)?, load_dataset_dir(eval_dir)?),
    };
    let prepare_split = |scenes: Vec<Scene>, label: &str| -> Result<Vec<PreparedScene>> {
        scenes
            .into_iter()
            .enumerate()
            .map(|(i, scene)| {
                let voxels = voxelize(
                    &scene,
                    &config.grid,
                    config.pretrain.max_points,
                    derive_seed(config.seed, label, i as u64),
                )?;
                let labels = label_voxels(&voxels, &scene);
                Ok(PreparedScene {
                    scene,
                    voxels,
                    labels,
                })
            })
            .collect()
    };
    Ok(PipelineData {
        train: prepare_split(train_scenes, "voxelize-train")?,
        eval: prepare_split(eval_scenes, "voxelize-eval")?,
        config,
    })
}

/// Pretraining with snapshots at `early_epoch` and the final epoch.
pub fn pretrain(data: &PipelineData) -> Result<(DetectorSnapshot, DetectorSnapshot, LossCurve)> {
    let config = &data.config.pretrain;
    config.validate()?;
    let (mut snaps, curve) = pretrain_multi(data, &[config.early_epoch])?;
    let late = snaps.pop().expect("late snapshot");
    let early = snaps.pop().expect("early snapshot");
    Ok((early, late, curve))
}

/// Pretraining that captures early snapshots at several epochs in one run
/// (plus the final late snapshot, returned last). Used by the early-epoch
/// sweep so every swept value shares one trajectory.
pub fn pretrain_multi(
    data: &PipelineData,
    early_epochs: &[usize],
) -> Result<(Vec<DetectorSnapshot>, LossCurve)> {
    let config = &data.config.pretrain;
    for &e in early_epochs {
        if !(1 <= e && e < config.epochs) {
            return Err(Error::Config(format!(
                "early epoch {e} outside 1..{}",
                config.epochs
            )));
        }
    }
    let mut snapshot_epochs: Vec<usize> = early_epochs.to_vec();
    snapshot_epochs.push(config.epochs);
    snapshot_epochs.sort_unstable();
    snapshot_epochs.dedup();
    let prepared: Vec<(&Scene, &VoxelSet)> = data
        .train
        .iter()
        .map(|p| (&p.scene, &p.voxels))
        .collect();
    let initial = DetectorParams::init(
        crate::detector::ArchConfig::default(),
        derive_seed(config.seed, "init", 0),
    );
    let (snaps, curve) = train_on_prepared(&prepared, initial, config, &snapshot_epochs)?;
    let out: Vec<DetectorSnapshot> = snaps
        .into_iter()
        .map(|(epoch, params)| DetectorSnapshot {
            params,
            stage: if epoch == config.epochs {
                Stage::Late
            } else {
                Stage::Early
            },
            epoch,
        })
        .collect();
    Ok((out, curve))
}

/// Wraps a bare kept-set into a [`SelectionResult`] so baseline selectors
/// flow through the same reporting paths; magnitudes are zero-filled.
fn wrap_baseline(
    voxels: &VoxelSet,
    kept: std::collections::BTreeSet<crate::voxelizer::VoxelIndex>,
    config: &SelectionConfig,
) -> SelectionResult {
    let n = voxels.len();
    SelectionResult {
        s_early: Default::default(),
        s_late: Default::default(),
        s_merged: kept,
        magnitudes: GradientMagnitudes {
            indices: voxels.indices().collect(),
            early: vec![0.0; n],
            late: vec![0.0; n],
        },
        config: *config,
        n_vs: (config.nu_vs * n as f64).round() as usize,
        k_late: 0,
        degenerate: false,
    }
}

/// Runs the configured selector once per training scene, in parallel, with
/// both snapshots frozen.
pub fn select_scenes(
    data: &PipelineData,
    early: &DetectorSnapshot,
    late: &DetectorSnapshot,
    selection: &SelectionConfig,
    kind: SelectorKind,
) -> Result<Vec<SelectionResult>> {
    data.train
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let scene_seed = derive_seed(selection.seed, "scene-selector", i as u64);
            match kind {
                SelectorKind::Gravos => gravos_select(&p.voxels, &p.scene, early, late, selection),
                SelectorKind::Dropout => dropout_select(&p.voxels, selection.nu_vs, scene_seed)
                    .map(|kept| wrap_baseline(&p.voxels, kept, selection)),
                SelectorKind::BgSampling => {
                    bg_sampling_select(&p.voxels, &p.labels, selection.nu_vs, scene_seed)
                        .map(|kept| wrap_baseline(&p.voxels, kept, selection))
                }
                SelectorKind::InvFreqSampling => {
                    inv_freq_sampling_select(&p.voxels, &p.labels, selection.nu_vs, scene_seed)
                        .map(|kept| wrap_baseline(&p.voxels, kept, selection))
                }
            }
        })
        .collect()
}

/// Fine-tunes from `init` on the restricted voxel sets (or on the full sets
/// when `selections` is `None` — the continued-training control).
///
/// Scenes whose restricted set is empty are skipped; if nothing remains, the
/// initial parameters are returned unchanged.
pub fn finetune(
    data: &PipelineData,
    init: &DetectorParams,
    selections: Option<&[SelectionResult]>,
    seed: u64,
) -> Result<(DetectorParams, LossCurve)> {
    let restricted: Vec<VoxelSet> = match selections {
        Some(sel) => {
            if sel.len() != data.train.len() {
                return Err(Error::Contract(
                    "selection list does not align with the training scenes".into(),
                ));
            }
            data.train
                .iter()
                .zip(sel)
                .map(|(p, s)| restrict(&p.voxels, &s.s_merged))
                .collect::<Result<_>>()?
        }
        None => data.train.iter().map(|p| p.voxels.clone()).collect(),
    };
    let prepared: Vec<(&Scene, &VoxelSet)> = data
        .train
        .iter()
        .zip(&restricted)
        .map(|(p, vs)| (&p.scene, vs))
        .collect();
    if prepared.iter().all(|(_, vs)| vs.is_empty()) {
        eprintln!("finetune: every restricted voxel set is empty; returning initial parameters");
        return Ok((init.clone(), LossCurve::default()));
    }

    let ft = &data.config.finetune;
    let base = &data.config.pretrain;
    let mut params = init.clone();
    let mut curve = LossCurve::default();

    if ft.phase1_epochs > 0 {
        let cfg = TrainConfig {
            epochs: ft.phase1_epochs,
            early_epoch: 1,
            optimizer: base.optimizer,
            lr: LrSchedule::constant(ft.phase1_lr),
            lambda_location: base.lambda_location,
            beta_background: base.beta_background,
            max_points: base.max_points,
            seed: derive_seed(seed, "finetune-phase1", 0),
        };
        let (mut snaps, c1) = train_on_prepared(&prepared, params, &cfg, &[ft.phase1_epochs])?;
        params = snaps.pop().expect("phase1 snapshot").1;
        curve.rows.extend(c1.rows);
    }
    if ft.phase2_epochs > 0 {
        let cfg = TrainConfig {
            epochs: ft.phase2_epochs,
            early_epoch: 1,
            optimizer: OptimizerKind::SgdStepDecay,
            lr: ft.phase2_lr,
            lambda_location: base.lambda_location,
            beta_background: base.beta_background,
            max_points: base.max_points,
            seed: derive_seed(seed, "finetune-phase2", 0),
        };
        let (mut snaps, c2) = train_on_prepared(&prepared, params, &cfg, &[ft.phase2_epochs])?;
        params = snaps.pop().expect("phase2 snapshot").1;
        let offset = ft.phase1_epochs;
        curve.rows.extend(c2.rows.into_iter().map(|mut r| {
            r.epoch += offset;
            r
        }));
    }
    Ok((params, curve))
}

/// Per-class AP (3D and BEV) plus the class means. Absent entries mark
/// classes with no ground truth (AP undefined).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub ap_3d: BTreeMap<ClassId, Option<f64>>,
    pub ap_bev: BTreeMap<ClassId, Option<f64>>,
    pub map_3d: Option<f64>,
    pub map_bev: Option<f64>,
    pub n_detections: usize,
    pub n_gt: usize,
}

/// Runs inference on every eval scene and scores it.
pub fn evaluate(data: &PipelineData, params: &DetectorParams) -> Result<EvalSummary> {
    let eval_cfg = &data.config.eval;
    let scene_evals: Vec<SceneEval> = data
        .eval
        .par_iter()
        .map(|p| {
            infer_on_voxel_set(
                &p.voxels,
                &p.scene,
                params,
                eval_cfg.score_threshold,
                eval_cfg.nms_iou,
            )
            .map(|detections| SceneEval {
                detections,
                gt_boxes: p.scene.gt_boxes.clone(),
            })
        })
        .collect::<Result<_>>()?;

    let mut summary = EvalSummary {
        ap_3d: BTreeMap::new(),
        ap_bev: BTreeMap::new(),
        map_3d: None,
        map_bev: None,
        n_detections: scene_evals.iter().map(|s| s.detections.len()).sum(),
        n_gt: scene_evals.iter().map(|s| s.gt_boxes.len()).sum(),
    };
    for mode in [IouMode::ThreeD, IouMode::Bev] {
        let match_config = eval_cfg.match_config(mode);
        for class in ClassId::ALL {
            let per_scene: Vec<SceneEval> = scene_evals
                .iter()
                .map(|s| SceneEval {
                    detections: s
                        .detections
                        .iter()
                        .filter(|d| d.class_id == class)
                        .copied()
                        .collect(),
                    gt_boxes: s
                        .gt_boxes
                        .iter()
                        .filter(|b| b.class_id == class)
                        .copied()
                        .collect(),
                })
                .collect();
            let ap = match average_precision_pooled(&per_scene, &match_config) {
                Ok(v) => Some(v),
                Err(Error::UndefinedAp(_)) => None,
                Err(e) => return Err(e),
            };
            match mode {
                IouMode::ThreeD => summary.ap_3d.insert(class, ap),
                IouMode::Bev => summary.ap_bev.insert(class, ap),
            };
        }
    }
    summary.map_3d = map_over_classes(&summary.ap_3d).ok();
    summary.map_bev = map_over_classes(&summary.ap_bev).ok();
    Ok(summary)
}

/// Mean per-class voxel reduction across scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceTable {
    /// Keyed by class name plus "Background"; `None` when no scene contained
    /// the class.
    pub mean_reduction: BTreeMap<String, Option<f64>>,
    pub scenes_with_class: BTreeMap<String, usize>,
    /// The uniform-dropout reference reduction `1 - nu_vs`.
    pub uniform_reference: f64,
}

/// Per-class kept/total reduction averaged over scenes.
///
/// For each class `c`, a scene contributes `1 - kept_c / total_c` when it has
/// at least one voxel of class `c`.
pub fn balance_report(
    selections: &[SelectionResult],
    labels: &[Vec<VoxelLabel>],
) -> Result<BalanceTable> {
    if selections.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} selections vs {} label lists",
            selections.len(),
            labels.len()
        )));
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (sel, scene_labels) in selections.iter().zip(labels) {
        let mut total: BTreeMap<&str, usize> = BTreeMap::new();
        let mut kept: BTreeMap<&str, usize> = BTreeMap::new();
        for l in scene_labels {
            *total.entry(l.name()).or_insert(0) += 1;
            if sel.s_merged.contains(&l.index) {
                *kept.entry(l.name()).or_insert(0) += 1;
            }
        }
        for (name, t) in total {
            let k = kept.get(name).copied().unwrap_or(0);
            let reduction = 1.0 - k as f64 / t as f64;
            let entry = sums.entry(name.to_string()).or_insert((0.0, 0));
            entry.0 += reduction;
            entry.1 += 1;
        }
    }
    let mut mean_reduction = BTreeMap::new();
    let mut scenes_with_class = BTreeMap::new();
    for name in ["Background", "Car", "Pedestrian", "Cyclist"] {
        match sums.get(name) {
            Some((sum, n)) => {
                mean_reduction.insert(name.to_string(), Some(sum / *n as f64));
                scenes_with_class.insert(name.to_string(), *n);
            }
            None => {
                mean_reduction.insert(name.to_string(), None);
                scenes_with_class.insert(name.to_string(), 0);
            }
        }
    }
    let uniform_reference = selections
        .first()
        .map_or(0.0, |s| 1.0 - s.config.nu_vs);
    Ok(BalanceTable {
        mean_reduction,
        scenes_with_class,
        uniform_reference,
    })
}

/// Aggregate selection-set statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SelectionStats {
    pub mean_selected: f64,
    pub mean_total: f64,
    pub mean_budget: f64,
    pub degenerate_scenes: usize,
}

pub fn selection_stats(selections: &[SelectionResult]) -> SelectionStats {
    if selections.is_empty() {
        return SelectionStats::default();
    }
    let n = selections.len() as f64;
    SelectionStats {
        mean_selected: selections.iter().map(|s| s.s_merged.len() as f64).sum::<f64>() / n,
        mean_total: selections.iter().map(|s| s.magnitudes.len() as f64).sum::<f64>() / n,
        mean_budget: selections.iter().map(|s| s.n_vs as f64).sum::<f64>() / n,
        degenerate_scenes: selections.iter().filter(|s| s.degenerate).count(),
    }
}

/// Wall-clock stage timings in seconds. Logged, never written into the
/// deterministic report files.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timings {
    pub prepare_s: f64,
    pub pretrain_s: f64,
    pub select_s: f64,
    pub finetune_s: f64,
    pub eval_s: f64,
    pub total_s: f64,
}

/// Everything a pipeline run reports.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub seed: u64,
    pub config: ExperimentConfig,
    /// The selector-fine-tuned model.
    pub selected: EvalSummary,
    /// The full-voxel continued-training control.
    pub control: EvalSummary,
    /// The pretrained (late-stage) model before any fine-tuning.
    pub pretrained: EvalSummary,
    pub balance: BalanceTable,
    pub stats: SelectionStats,
    pub pretrain_curve: LossCurve,
    pub finetune_curve: LossCurve,
    pub control_curve: LossCurve,
    pub timings: Timings,
}

/// A report plus the artifacts needed to write a full report directory.
#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    pub report: ExperimentReport,
    pub selections: Vec<SelectionResult>,
    pub early: DetectorSnapshot,
    pub late: DetectorSnapshot,
    pub selected_model: DetectorParams,
    pub control_model: DetectorParams,
}

/// The whole procedure: pretrain, select once per scene from the frozen
/// snapshots, fine-tune from the late snapshot on the selected voxels, run
/// the continued-training control, and evaluate everything on held-out
/// scenes.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineArtifacts> {
    let t0 = Instant::now();
    let data = prepare(config)?;
    let prepare_s = t0.elapsed().as_secs_f64();

    let t = Instant::now();
    let (early, late, pretrain_curve) = pretrain(&data)?;
    let pretrain_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let selections = select_scenes(&data, &early, &late, &data.config.selection, data.config.selector)?;
    let select_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let ft_seed = derive_seed(data.config.seed, "finetune", 0);
    let (selected_model, finetune_curve) =
        finetune(&data, &late.params, Some(&selections), ft_seed)?;
    let (control_model, control_curve) = finetune(&data, &late.params, None, ft_seed)?;
    let finetune_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let selected = evaluate(&data, &selected_model)?;
    let control = evaluate(&data, &control_model)?;
    let pretrained = evaluate(&data, &late.params)?;
    let eval_s = t.elapsed().as_secs_f64();

    let labels: Vec<Vec<VoxelLabel>> = data.train.iter().map(|p| p.labels.clone()).collect();
    let balance = balance_report(&selections, &labels)?;
    let stats = selection_stats(&selections);

    let report = ExperimentReport {
        seed: data.config.seed,
        config: data.config.clone(),
        selected,
        control,
        pretrained,
        balance,
        stats,
        pretrain_curve,
        finetune_curve,
        control_curve,
        timings: Timings {
            prepare_s,
            pretrain_s,
            select_s,
            finetune_s,
            eval_s,
            total_s: t0.elapsed().as_secs_f64(),
        },
    };
    Ok(PipelineArtifacts {
        report,
        selections,
        early,
        late,
        selected_model,
        control_model,
    })
}

/// Ablation axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NuVs,
    NuIdr,
    EarlyEpoch,
    Mechanisms,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<SweepAxis> {
        match s {
            "nu_vs" => Ok(SweepAxis::NuVs),
            "nu_idr" => Ok(SweepAxis::NuIdr),
            "early_epoch" => Ok(SweepAxis::EarlyEpoch),
            "mechanisms" => Ok(SweepAxis::Mechanisms),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?} (expected nu_vs, nu_idr, early_epoch, mechanisms)"
            ))),
        }
    }
}

/// A value on a sweep axis.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepValue {
    Number(f64),
    MechanismPair { early: Mechanism, late: Mechanism },
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Number(v) => write!(f, "{v}"),
            SweepValue::MechanismPair { early, late } => write!(f, "{early}/{late}"),
        }
    }
}

/// Parses one sweep value for an axis; mechanism pairs read as
/// `early/late`, each side `mean`, `median`, `topk` or `topk:<ratio>`.
pub fn parse_sweep_value(axis: SweepAxis, s: &str) -> Result<SweepValue> {
    match axis {
        SweepAxis::NuVs | SweepAxis::NuIdr => {
            let v: f64 = s
                .parse()
                .map_err(|e| Error::Config(format!("value {s:?}: {e}")))?;
            Ok(SweepValue::Number(v))
        }
        SweepAxis::EarlyEpoch => {
            let v: usize = s
                .parse()
                .map_err(|e| Error::Config(format!("value {s:?}: {e}")))?;
            Ok(SweepValue::Number(v as f64))
        }
        SweepAxis::Mechanisms => {
            let (e, l) = s
                .split_once('/')
                .ok_or_else(|| Error::Config(format!("mechanism pair {s:?} needs early/late")))?;
            Ok(SweepValue::MechanismPair {
                early: e.parse()?,
                late: l.parse()?,
            })
        }
    }
}

/// The mechanism-combination grid of the ablation study, in row order:
/// every (mean | median | topk 50/80) pairing plus the two mixed-ratio
/// top-k rows.
pub fn mechanism_grid() -> Vec<(Mechanism, Mechanism)> {
    let topk50 = Mechanism::TopK(Some(0.625));
    let topk30 = Mechanism::TopK(Some(0.375));
    vec![
        (Mechanism::Mean, Mechanism::Mean),
        (Mechanism::Mean, Mechanism::Median),
        (Mechanism::Mean, topk50),
        (Mechanism::Median, Mechanism::Mean),
        (Mechanism::Median, Mechanism::Median),
        (Mechanism::Median, topk50),
        (topk50, Mechanism::Mean),
        (topk50, Mechanism::Median),
        (topk50, topk30),
        (topk30, topk50),
    ]
}

/// One sweep run outcome; failures are recorded and the sweep continues.
#[derive(Debug)]
pub struct SweepRow {
    pub value: String,
    pub outcome: Result<ExperimentReport>,
}

/// Runs one pipeline per axis value. The prepared data, the pretrained
/// snapshots, and the control run are shared across selection-stage axes
/// (and across early-epoch values, which share one training trajectory), so
/// each row isolates the swept factor.
pub fn sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[SweepValue],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let t0 = Instant::now();
    let data = prepare(config)?;

    // One pretraining pass; the early-epoch axis snapshots every requested
    // epoch along the same trajectory.
    let (snapshots, pretrain_curve) = match axis {
        SweepAxis::EarlyEpoch => {
            let epochs: Vec<usize> = values
                .iter()
                .map(|v| match v {
                    SweepValue::Number(e) => Ok(*e as usize),
                    _ => Err(Error::Config("early_epoch values must be integers".into())),
                })
                .collect::<Result<_>>()?;
            pretrain_multi(&data, &epochs)?
        }
        _ => {
            let (early, late, curve) = pretrain(&data)?;
            (vec![early, late], curve)
        }
    };
    let late = snapshots
        .iter()
        .find(|s| s.stage == Stage::Late)
        .expect("late snapshot")
        .clone();

    let ft_seed = derive_seed(data.config.seed, "finetune", 0);
    let (control_model, control_curve) = finetune(&data, &late.params, None, ft_seed)?;
    let control = evaluate(&data, &control_model)?;
    let pretrained = evaluate(&data, &late.params)?;
    let labels: Vec<Vec<VoxelLabel>> = data.train.iter().map(|p| p.labels.clone()).collect();

    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let run = || -> Result<ExperimentReport> {
            let mut cfg = data.config.clone();
            let mut early = snapshots
                .iter()
                .find(|s| s.stage == Stage::Early)
                .cloned();
            match (axis, value) {
                (SweepAxis::NuVs, SweepValue::Number(v)) => cfg.selection.nu_vs = *v,
                (SweepAxis::NuIdr, SweepValue::Number(v)) => cfg.selection.nu_idr = *v,
                (SweepAxis::EarlyEpoch, SweepValue::Number(e)) => {
                    early = snapshots
                        .iter()
                        .find(|s| s.stage == Stage::Early && s.epoch == *e as usize)
                        .cloned();
                }
                (SweepAxis::Mechanisms, SweepValue::MechanismPair { early: e, late: l }) => {
                    cfg.selection.early_mechanism = *e;
                    cfg.selection.late_mechanism = *l;
                }
                _ => return Err(Error::Config("value does not fit the axis".into())),
            }
            cfg.selection.validate()?;
            let early = early.ok_or_else(|| Error::Config("no early snapshot".into()))?;
            let selections = select_scenes(&data, &early, &late, &cfg.selection, cfg.selector)?;
            let (selected_model, finetune_curve) =
                finetune(&data, &late.params, Some(&selections), ft_seed)?;
            let selected = evaluate(&data, &selected_model)?;
            let balance = balance_report(&selections, &labels)?;
            let stats = selection_stats(&selections);
            Ok(ExperimentReport {
                seed: cfg.seed,
                config: cfg,
                selected,
                control: control.clone(),
                pretrained: pretrained.clone(),
                balance,
                stats,
                pretrain_curve: pretrain_curve.clone(),
                finetune_curve,
                control_curve: control_curve.clone(),
                timings: Timings {
                    total_s: t0.elapsed().as_secs_f64(),
                    ..Timings::default()
                },
            })
        };
        rows.push(SweepRow {
            value: value.to_string(),
            outcome: run(),
        });
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// `report.csv`: one row per (model, class) plus the class-mean rows.
pub fn report_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("model,class,ap_3d,ap_bev\n");
    for (name, summary) in [
        ("selected", &report.selected),
        ("control", &report.control),
        ("pretrained", &report.pretrained),
    ] {
        for class in ClassId::ALL {
            out.push_str(&format!(
                "{name},{class},{},{}\n",
                fmt_opt(summary.ap_3d[&class]),
                fmt_opt(summary.ap_bev[&class]),
            ));
        }
        out.push_str(&format!(
            "{name},ALL,{},{}\n",
            fmt_opt(summary.map_3d),
            fmt_opt(summary.map_bev),
        ));
    }
    out
}

/// `balance.csv`: per-class mean reduction plus the uniform reference.
pub fn balance_csv(balance: &BalanceTable) -> String {
    let mut out = String::from("class,mean_reduction,scenes\n");
    for (name, red) in &balance.mean_reduction {
        out.push_str(&format!(
            "{name},{},{}\n",
            fmt_opt(*red),
            balance.scenes_with_class[name]
        ));
    }
    out.push_str(&format!(
        "UniformReference,{},\n",
        balance.uniform_reference
    ));
    out
}

/// Combined sweep CSV: one row per run.
pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "axis,value,status,map_3d,map_bev,control_map_3d,mean_selected,mean_total\n",
    );
    let axis_name = match axis {
        SweepAxis::NuVs => "nu_vs",
        SweepAxis::NuIdr => "nu_idr",
        SweepAxis::EarlyEpoch => "early_epoch",
        SweepAxis::Mechanisms => "mechanisms",
    };
    for row in rows {
        match &row.outcome {
            Ok(r) => out.push_str(&format!(
                "{axis_name},{},ok,{},{},{},{},{}\n",
                row.value,
                fmt_opt(r.selected.map_3d),
                fmt_opt(r.selected.map_bev),
                fmt_opt(r.control.map_3d),
                r.stats.mean_selected,
                r.stats.mean_total,
            )),
            Err(e) => out.push_str(&format!(
                "{axis_name},{},\"error: {}\",,,,,\n",
                row.value,
                e.to_string().replace('"', "'"),
            )),
        }
    }
    out
}

/// Writes the report directory: `report.csv`, `balance.csv`,
/// `selection/*.csv`, `labels/*.csv`, `snapshots/*.bin`, and the loss curves.
/// Timings go to stderr so every written file is deterministic.
pub fn write_artifacts(artifacts: &PipelineArtifacts, data: &PipelineData, dir: &Path) -> Result<()> {
    let io = |p: &Path, e: std::io::Error| Error::io(p, e);
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    std::fs::write(dir.join("report.csv"), report_csv(&artifacts.report))
        .map_err(|e| io(&dir.join("report.csv"), e))?;
    std::fs::write(dir.join("balance.csv"), balance_csv(&artifacts.report.balance))
        .map_err(|e| io(&dir.join("balance.csv"), e))?;

    let sel_dir = dir.join("selection");
    std::fs::create_dir_all(&sel_dir).map_err(|e| io(&sel_dir, e))?;
    let lab_dir = dir.join("labels");
    std::fs::create_dir_all(&lab_dir).map_err(|e| io(&lab_dir, e))?;
    for (p, sel) in data.train.iter().zip(&artifacts.selections) {
        let sp = sel_dir.join(format!("{}.csv", p.scene.scene_id));
        std::fs::write(&sp, selection_csv(sel)).map_err(|e| io(&sp, e))?;
        let mut lines = String::from("i,j,k,label\n");
        for l in &p.labels {
            lines.push_str(&format!(
                "{},{},{},{}\n",
                l.index.0[0],
                l.index.0[1],
                l.index.0[2],
                l.name()
            ));
        }
        let lp = lab_dir.join(format!("{}.csv", p.scene.scene_id));
        std::fs::write(&lp, lines).map_err(|e| io(&lp, e))?;
    }

    let snap_dir = dir.join("snapshots");
    std::fs::create_dir_all(&snap_dir).map_err(|e| io(&snap_dir, e))?;
    save_snapshot(&artifacts.early, &snap_dir.join("early.bin"))?;
    save_snapshot(&artifacts.late, &snap_dir.join("late.bin"))?;
    let total_epochs = data.config.pretrain.epochs
        + data.config.finetune.phase1_epochs
        + data.config.finetune.phase2_epochs;
    for (name, params) in [
        ("selected", &artifacts.selected_model),
        ("control", &artifacts.control_model),
    ] {
        save_snapshot(
            &DetectorSnapshot {
                params: params.clone(),
                stage: Stage::Late,
                epoch: total_epochs,
            },
            &snap_dir.join(format!("{name}.bin")),
        )?;
    }

    for (name, curve) in [
        ("pretrain_curve.csv", &artifacts.report.pretrain_curve),
        ("finetune_curve.csv", &artifacts.report.finetune_curve),
        ("control_curve.csv", &artifacts.report.control_curve),
    ] {
        std::fs::write(dir.join(name), crate::detector::loss_curve_csv(curve))
            .map_err(|e| io(&dir.join(name), e))?;
    }

    let t = &artifacts.report.timings;
    eprintln!(
        "timings: prepare {:.2}s, pretrain {:.2}s, select {:.2}s, finetune {:.2}s, eval {:.2}s, total {:.2}s",
        t.prepare_s, t.pretrain_s, t.select_s, t.finetune_s, t.eval_s, t.total_s
    );
    Ok(())
}
