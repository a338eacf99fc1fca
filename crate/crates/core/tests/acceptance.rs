//! Acceptance suite. Each test is one numbered criterion and prints a
//! pass/fail line with its measured quantities; the heavy end-to-end runs
//! behind criteria 6-8 are computed once and shared.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use gravos_core::autodiff::InputKey;
use gravos_core::detector::{
    build_location_loss, build_total_loss, ArchConfig, DetectorParams, LossOpts,
};
use gravos_core::metrics::{average_precision, iou_bev, Detection, MatchConfig};
use gravos_core::scene::{
    generate_scene, Box3D, ClassCounts, ClassId, ClassPointRanges, PointRange, Scene, SynthConfig,
};
use gravos_core::seed::{derive_seed, rng_from};
use gravos_core::selector::{
    select_from_magnitudes, select_mean, select_median, select_topk, voxel_gradient_magnitude,
    GradientMagnitudes, Mechanism, SelectionConfig, SelectionResult,
};
use gravos_core::trainer::{
    balance_report, evaluate, finetune, prepare, pretrain, select_scenes, DatasetConfig,
    ExperimentConfig, SelectorKind,
};
use gravos_core::voxelizer::{restrict, voxelize, VoxelIndex, VoxelSet};
use rand::Rng;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// A small random scene, voxelized and truncated to at most `max_voxels`
/// voxels with at most `max_points` points each.
fn small_fixture(seed: u64, max_voxels: usize, max_points: usize) -> (Scene, VoxelSet) {
    let synth = SynthConfig {
        class_counts: ClassCounts {
            car: 2,
            pedestrian: 1,
            cyclist: 1,
        },
        background_point_count: 6,
        points_per_object: ClassPointRanges {
            car: PointRange { min: 5, max: 9 },
            pedestrian: PointRange { min: 4, max: 7 },
            cyclist: PointRange { min: 4, max: 7 },
        },
        seed,
        ..SynthConfig::default()
    };
    let scene = generate_scene(&synth).unwrap();
    let grid = gravos_core::voxelizer::GridSpec::synthetic_default();
    let vs = voxelize(&scene, &grid, max_points, seed).unwrap();
    let keep: std::collections::BTreeSet<VoxelIndex> =
        vs.indices().take(max_voxels).collect();
    let vs = restrict(&vs, &keep).unwrap();
    (scene, vs)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

// ---------------------------------------------------------------------------
// Criterion 1: autodiff vs central finite differences on detector losses
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_autodiff_finite_differences() {
    let t0 = Instant::now();
    let mut checked_inputs = 0usize;
    let mut worst = 0.0f64;
    for trial in 0..50u64 {
        let (scene, vs) = small_fixture(derive_seed(0xC1, "fd", trial), 10, 3);
        if vs.is_empty() {
            continue;
        }
        let params = DetectorParams::init(ArchConfig::default(), derive_seed(0xC1, "params", trial));
        let mut built = build_total_loss(&vs, &scene, &params, &LossOpts::default()).unwrap();
        // Tolerance widens to 1e-2 when any relu sits within 1e-6 of its kink.
        let near_kink = built
            .forward
            .graph
            .relu_preactivations()
            .iter()
            .any(|x| x.abs() < 1e-6);
        let tol = if near_kink { 1e-2 } else { 1e-4 };
        let report = built.forward.graph.grad_check(1e-5, tol).unwrap();
        assert!(
            report.failures.is_empty(),
            "trial {trial}: {} gradient mismatches, max rel err {}",
            report.failures.len(),
            report.max_rel_error
        );
        checked_inputs += report.entries.len();
        worst = worst.max(report.max_rel_error);
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "runtime {elapsed:.1}s exceeds 30s");
    eprintln!(
        "[PASS] criterion 1: {checked_inputs} input-point gradients across 50 loss graphs \
         match central finite differences (max rel err {worst:.2e}) in {elapsed:.1}s"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: per-voxel magnitude vs brute-force recomputation
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_magnitude_oracle_equivalence() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let (scene, vs) = small_fixture(derive_seed(0xC2, "mag", trial), 12, 4);
        if vs.is_empty() {
            continue;
        }
        let params = DetectorParams::init(ArchConfig::default(), derive_seed(0xC2, "params", trial));
        let mut built = build_location_loss(&vs, &scene, &params).unwrap();
        built.forward.graph.forward().unwrap();
        let raw_map = built.forward.graph.backward().unwrap();
        let mags = voxel_gradient_magnitude(&built.forward.graph, &vs).unwrap();

        // Brute force from the raw gradient map, independent of the
        // implementation path under test.
        for (row, voxel) in vs.voxels.iter().enumerate() {
            let mut acc = 0.0f64;
            for slot in 0..voxel.n_points() {
                let mut sq = 0.0;
                for channel in 0..4u8 {
                    let g = raw_map[&InputKey {
                        voxel: voxel.index.0,
                        slot: slot as u16,
                        channel,
                    }];
                    sq += g * g;
                }
                acc += sq.sqrt();
            }
            let expected = acc / voxel.n_points() as f64;
            let diff = (mags[row] - expected).abs();
            assert!(
                diff <= 1e-12,
                "trial {trial} voxel {row}: {} vs {expected}",
                mags[row]
            );
            worst = worst.max(diff);
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "runtime {elapsed:.1}s exceeds 5s");
    eprintln!(
        "[PASS] criterion 2: magnitude equals brute-force recomputation on 100 fixtures \
         (max abs diff {worst:.2e}) in {elapsed:.1}s"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: mechanism exactness against exhaustive enumeration
// ---------------------------------------------------------------------------

fn vi(i: i32) -> VoxelIndex {
    VoxelIndex([i, 0, 0])
}

#[test]
fn criterion_03_mechanism_exhaustive_enumeration() {
    let t0 = Instant::now();
    let mut maps_checked = 0usize;
    for n in 1..=8usize {
        let mut assignment = vec![0u8; n];
        loop {
            let values: Vec<(VoxelIndex, f64)> = assignment
                .iter()
                .enumerate()
                .map(|(i, v)| (vi(i as i32), *v as f64))
                .collect();

            // Mean oracle.
            let mean: f64 =
                values.iter().map(|(_, v)| v).sum::<f64>() / n as f64;
            let expect_mean: std::collections::BTreeSet<VoxelIndex> = values
                .iter()
                .filter(|(_, v)| *v >= mean)
                .map(|(i, _)| *i)
                .collect();
            assert_eq!(select_mean(&values).unwrap(), expect_mean, "{assignment:?}");

            // Median oracle: lower median, inclusive threshold.
            let mut sorted: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
            sorted.sort_by(f64::total_cmp);
            let med = sorted[(n - 1) / 2];
            let expect_median: std::collections::BTreeSet<VoxelIndex> = values
                .iter()
                .filter(|(_, v)| *v >= med)
                .map(|(i, _)| *i)
                .collect();
            assert_eq!(select_median(&values).unwrap(), expect_median, "{assignment:?}");

            // Top-k oracle: enumerate every k-subset, keep the max-sum ones,
            // break ties by the lexicographically smallest index list.
            for k in 0..=n + 1 {
                let kk = k.min(n);
                let mut best: Option<(f64, Vec<usize>)> = None;
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() as usize != kk {
                        continue;
                    }
                    let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                    let sum: f64 = members.iter().map(|&i| values[i].1).sum();
                    let better = match &best {
                        None => true,
                        Some((bs, bm)) => {
                            sum > *bs + 1e-12 || ((sum - *bs).abs() <= 1e-12 && members < *bm)
                        }
                    };
                    if better {
                        best = Some((sum, members));
                    }
                }
                let expect: std::collections::BTreeSet<VoxelIndex> = best
                    .unwrap()
                    .1
                    .into_iter()
                    .map(|i| vi(i as i32))
                    .collect();
                assert_eq!(select_topk(&values, k), expect, "{assignment:?} k={k}");
            }

            maps_checked += 1;
            // Next assignment in base 4.
            let mut pos = 0;
            loop {
                if pos == n {
                    break;
                }
                assignment[pos] += 1;
                if assignment[pos] < 4 {
                    break;
                }
                assignment[pos] = 0;
                pos += 1;
            }
            if pos == n {
                break;
            }
        }
    }

    // The six-voxel hand fixture of the full selection pass.
    let mags = GradientMagnitudes {
        indices: (0..6).map(vi).collect(),
        early: vec![6.0, 1.0, 1.0, 4.0, 0.0, 0.0],
        late: vec![1.0, 5.0, 3.0, 2.0, 0.0, 0.0],
    };
    let config = SelectionConfig {
        nu_vs: 0.5,
        nu_idr: 2.0 / 3.0,
        early_mechanism: Mechanism::Mean,
        late_mechanism: Mechanism::TopK(None),
        seed: 0,
    };
    let r = select_from_magnitudes(mags, &config, false).unwrap();
    let set = |ids: &[i32]| -> std::collections::BTreeSet<VoxelIndex> {
        ids.iter().map(|i| vi(*i)).collect()
    };
    assert_eq!(r.s_late, set(&[1, 2]));
    assert_eq!(r.s_early, set(&[0, 3]));
    assert_eq!(r.s_merged, set(&[0, 1, 2]));

    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s exceeds 60s");
    eprintln!(
        "[PASS] criterion 3: mechanisms match exhaustive oracles on {maps_checked} maps; \
         six-voxel fixture reproduced, in {elapsed:.1}s"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: scale invariance
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_scale_invariance() {
    let mut rng = rng_from(0xC4);
    for trial in 0..1000 {
        let n = rng.random_range(1..=64usize);
        let values: Vec<(VoxelIndex, f64)> = (0..n)
            .map(|i| (vi(i as i32), rng.random_range(0.0..10.0)))
            .collect();
        let k = rng.random_range(0..=n);
        for alpha in [1e-3, 1.0, 1e3] {
            let scaled: Vec<(VoxelIndex, f64)> =
                values.iter().map(|(i, v)| (*i, v * alpha)).collect();
            assert_eq!(
                select_mean(&values).unwrap(),
                select_mean(&scaled).unwrap(),
                "trial {trial} alpha {alpha} mean"
            );
            assert_eq!(
                select_median(&values).unwrap(),
                select_median(&scaled).unwrap(),
                "trial {trial} alpha {alpha} median"
            );
            assert_eq!(
                select_topk(&values, k),
                select_topk(&scaled, k),
                "trial {trial} alpha {alpha} topk"
            );
        }
    }
    eprintln!(
        "[PASS] criterion 4: mechanism outputs identical under scaling by 1e-3, 1, 1e3 \
         on 1000 random maps"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: metric oracles
// ---------------------------------------------------------------------------

/// Monte-Carlo BEV IoU over a sampling box covering both footprints. This is
/// the independent geometric oracle: point-in-rotated-rect tests only.
fn monte_carlo_iou_bev(a: &Box3D, b: &Box3D, samples: usize, rng: &mut impl Rng) -> f64 {
    let corners: Vec<[f64; 2]> = a
        .bev_corners()
        .iter()
        .chain(b.bev_corners().iter())
        .copied()
        .collect();
    let (mut xlo, mut xhi, mut ylo, mut yhi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for c in corners {
        xlo = xlo.min(c[0]);
        xhi = xhi.max(c[0]);
        ylo = ylo.min(c[1]);
        yhi = yhi.max(c[1]);
    }
    let inside = |bx: &Box3D, x: f64, y: f64| {
        let (s, c) = bx.yaw.sin_cos();
        let (dx, dy) = (x - bx.cx, y - bx.cy);
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= bx.length / 2.0 && ly.abs() <= bx.width / 2.0
    };
    let (mut n_union, mut n_inter) = (0usize, 0usize);
    for _ in 0..samples {
        let x = rng.random_range(xlo..xhi);
        let y = rng.random_range(ylo..yhi);
        let in_a = inside(a, x, y);
        let in_b = inside(b, x, y);
        if in_a || in_b {
            n_union += 1;
        }
        if in_a && in_b {
            n_inter += 1;
        }
    }
    if n_union == 0 {
        0.0
    } else {
        n_inter as f64 / n_union as f64
    }
}

#[test]
fn criterion_05_metric_oracles() {
    let t0 = Instant::now();
    let mut rng = rng_from(0xC5);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let a = Box3D::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            0.0,
            rng.random_range(0.5..4.0),
            rng.random_range(0.5..2.5),
            1.0,
            rng.random_range(-3.14..3.14),
            ClassId::Car,
        )
        .unwrap();
        let b = Box3D::new(
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
            0.0,
            rng.random_range(0.5..4.0),
            rng.random_range(0.5..2.5),
            1.0,
            rng.random_range(-3.14..3.14),
            ClassId::Car,
        )
        .unwrap();
        let exact = iou_bev(&a, &b);
        let mc = monte_carlo_iou_bev(&a, &b, 1_000_000, &mut rng);
        let diff = (exact - mc).abs();
        assert!(diff < 0.01, "trial {trial}: exact {exact} vs MC {mc}");
        worst = worst.max(diff);
    }

    // AP fixtures, hand-enumerated.
    let car = |cx: f64| Box3D::new(cx, 0.0, 0.0, 4.0, 1.8, 1.5, 0.0, ClassId::Car).unwrap();
    let det = |b: Box3D, score: f64| Detection {
        bbox: b,
        class_id: b.class_id,
        score,
    };
    let match_config = MatchConfig::default();

    let gts = vec![car(0.0), car(20.0)];
    let perfect: Vec<Detection> = gts.iter().map(|b| det(*b, 1.0)).collect();
    assert_eq!(average_precision(&perfect, &gts, &match_config).unwrap(), 1.0);

    assert_eq!(average_precision(&[], &gts, &match_config).unwrap(), 0.0);

    let dets = vec![det(car(0.0), 0.9), det(car(40.0), 0.8), det(car(20.0), 0.7)];
    let ap = average_precision(&dets, &gts, &match_config).unwrap();
    assert!(
        (ap - 5.0 / 6.0).abs() < 1e-12,
        "two-gt/three-det fixture: {ap} vs 5/6"
    );

    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "runtime {elapsed:.1}s exceeds 2min");
    eprintln!(
        "[PASS] criterion 5: rotated IoU within 0.01 of the Monte-Carlo oracle \
         (worst {worst:.4}) on 100 pairs; AP fixtures exact (incl. 5/6), in {elapsed:.1}s"
    );
}

// ---------------------------------------------------------------------------
// Criteria 6-8: shared end-to-end runs
// ---------------------------------------------------------------------------

struct SeedRun {
    balance: BTreeMap<String, f64>,
    maps: BTreeMap<&'static str, f64>,
    prepare_s: f64,
    pretrain_s: f64,
    select_s: f64,
    /// Fine-tune plus evaluation time per run name.
    run_s: BTreeMap<&'static str, f64>,
}

fn heavy_runs() -> &'static Vec<SeedRun> {
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        [101u64, 202, 303]
            .into_iter()
            .map(|seed| {
                let config = ExperimentConfig {
                    seed,
                    ..ExperimentConfig::default()
                };
                assert!(matches!(
                    config.dataset,
                    DatasetConfig::Synthetic {
                        train_scenes: 200,
                        eval_scenes: 50,
                        ..
                    }
                ));
                assert_eq!(config.selection.nu_vs, 0.8);
                assert_eq!(config.selection.nu_idr, 0.625);

                let t = Instant::now();
                let data = prepare(&config).unwrap();
                let prepare_s = t.elapsed().as_secs_f64();

                let t = Instant::now();
                let (early, late, _) = pretrain(&data).unwrap();
                let pretrain_s = t.elapsed().as_secs_f64();

                let t = Instant::now();
                let gravos08 =
                    select_scenes(&data, &early, &late, &data.config.selection, SelectorKind::Gravos)
                        .unwrap();
                let dropout08 = select_scenes(
                    &data,
                    &early,
                    &late,
                    &data.config.selection,
                    SelectorKind::Dropout,
                )
                .unwrap();
                let select_s = t.elapsed().as_secs_f64();

                // Re-threshold the stored magnitudes for the other ratios;
                // the gradients do not depend on nu_vs.
                let reselect = |nu: f64| -> Vec<SelectionResult> {
                    let cfg = SelectionConfig {
                        nu_vs: nu,
                        ..data.config.selection
                    };
                    gravos08
                        .iter()
                        .map(|s| {
                            select_from_magnitudes(s.magnitudes.clone(), &cfg, s.degenerate)
                                .unwrap()
                        })
                        .collect()
                };

                let labels: Vec<_> = data.train.iter().map(|p| p.labels.clone()).collect();
                let balance_table = balance_report(&gravos08, &labels).unwrap();
                let balance: BTreeMap<String, f64> = balance_table
                    .mean_reduction
                    .iter()
                    .filter_map(|(k, v)| v.map(|x| (k.clone(), x)))
                    .collect();

                let ft_seed = derive_seed(seed, "acceptance-finetune", 0);
                let mut maps = BTreeMap::new();
                let mut run_s = BTreeMap::new();
                let mut run_one = |name: &'static str, sel: Option<&[SelectionResult]>| {
                    let t = Instant::now();
                    let (model, _) = finetune(&data, &late.params, sel, ft_seed).unwrap();
                    let eval = evaluate(&data, &model).unwrap();
                    run_s.insert(name, t.elapsed().as_secs_f64());
                    maps.insert(name, eval.map_3d.expect("mAP defined on synthetic eval"));
                };
                run_one("gravos08", Some(&gravos08));
                run_one("dropout08", Some(&dropout08));
                run_one("control", None);
                run_one("gravos04", Some(&reselect(0.4)));
                run_one("gravos06", Some(&reselect(0.6)));
                run_one("gravos10", Some(&reselect(1.0)));

                eprintln!(
                    "[seed {seed}] balance {balance:?}\n[seed {seed}] maps {maps:?}"
                );
                SeedRun {
                    balance,
                    maps,
                    prepare_s,
                    pretrain_s,
                    select_s,
                    run_s,
                }
            })
            .collect()
    })
}

#[test]
fn criterion_06_balance_ordering() {
    let runs = heavy_runs();
    let med = |class: &str| median(runs.iter().map(|r| r.balance[class]).collect());
    let bg = med("Background");
    let car = med("Car");
    let cyc = med("Cyclist");
    let attributed: f64 = runs
        .iter()
        .map(|r| r.prepare_s + r.pretrain_s + r.select_s + r.run_s["gravos08"])
        .sum();
    assert!(
        bg > car && car > cyc,
        "expected reduction ordering Background > Car > Cyclist, got {bg:.4} / {car:.4} / {cyc:.4}"
    );
    assert!(
        attributed < 15.0 * 60.0,
        "attributed runtime {attributed:.0}s exceeds 15min"
    );
    eprintln!(
        "[PASS] criterion 6: median voxel reductions Background {bg:.3} > Car {car:.3} > \
         Cyclist {cyc:.3} (3 seeds, {attributed:.0}s attributed)"
    );
}

#[test]
fn criterion_07_selection_beats_dropout() {
    let runs = heavy_runs();
    let med = |name: &str| median(runs.iter().map(|r| r.maps[name]).collect());
    let gravos = med("gravos08");
    let dropout = med("dropout08");
    let control = med("control");
    let attributed: f64 = runs
        .iter()
        .map(|r| {
            r.prepare_s
                + r.pretrain_s
                + r.select_s
                + r.run_s["gravos08"]
                + r.run_s["dropout08"]
                + r.run_s["control"]
        })
        .sum();
    assert!(
        gravos >= dropout,
        "median mAP: gravos {gravos:.4} < dropout {dropout:.4}"
    );
    assert!(
        gravos >= control - 0.01,
        "median mAP: gravos {gravos:.4} below control {control:.4} - 0.01"
    );
    assert!(
        attributed < 45.0 * 60.0,
        "attributed runtime {attributed:.0}s exceeds 45min"
    );
    eprintln!(
        "[PASS] criterion 7: median mAP gravos {gravos:.4} >= dropout {dropout:.4} and >= \
         control {control:.4} - 0.01 (3 seeds, {attributed:.0}s attributed)"
    );
}

#[test]
fn criterion_08_ratio_sweep_shape() {
    let runs = heavy_runs();
    let med = |name: &str| median(runs.iter().map(|r| r.maps[name]).collect());
    let m04 = med("gravos04");
    let m06 = med("gravos06");
    let m08 = med("gravos08");
    let m10 = med("gravos10");
    assert!(
        m04 < m08,
        "median mAP at nu_vs 0.4 ({m04:.4}) not strictly below 0.8 ({m08:.4})"
    );
    eprintln!(
        "[PASS] criterion 8: ratio sweep mAP medians 0.4: {m04:.4} < 0.8: {m08:.4} \
         (0.6: {m06:.4}, 1.0: {m10:.4})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: degenerate inputs
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_degenerate_inputs() {
    // A mixed dataset: normal scenes plus empty, single-point, all-background
    // and zero-gt scenes, pushed through the whole pipeline.
    let config = ExperimentConfig {
        dataset: DatasetConfig::Synthetic {
            train_scenes: 4,
            eval_scenes: 2,
            synth: SynthConfig {
                class_counts: ClassCounts {
                    car: 2,
                    pedestrian: 1,
                    cyclist: 1,
                },
                background_point_count: 10,
                ..SynthConfig::default()
            },
        },
        pretrain: gravos_core::detector::TrainConfig {
            epochs: 3,
            early_epoch: 1,
            ..Default::default()
        },
        finetune: gravos_core::trainer::FinetuneConfig {
            phase1_epochs: 2,
            phase2_epochs: 1,
            ..Default::default()
        },
        seed: 99,
        ..ExperimentConfig::default()
    };
    let mut data = prepare(&config).unwrap();

    let degenerate_scenes = vec![
        Scene::new("empty", vec![], vec![]),
        Scene::new(
            "single_point",
            vec![gravos_core::scene::Point::new(0.1, 0.1, 0.1, 0.5).unwrap()],
            vec![],
        ),
        {
            // All background, no ground truth.
            let synth = SynthConfig {
                class_counts: ClassCounts::default(),
                background_point_count: 30,
                seed: 7,
                ..SynthConfig::default()
            };
            let mut s = generate_scene(&synth).unwrap();
            s.scene_id = "all_background".into();
            s
        },
    ];
    for scene in degenerate_scenes {
        let voxels = voxelize(&scene, &config.grid, 8, 1).unwrap();
        let labels = gravos_core::voxelizer::label_voxels(&voxels, &scene);
        data.train.push(gravos_core::trainer::PreparedScene {
            scene: scene.clone(),
            voxels: voxels.clone(),
            labels,
        });
        data.eval.push(gravos_core::trainer::PreparedScene {
            scene: scene.clone(),
            voxels,
            labels: vec![],
        });
    }

    let (early, late, _) = pretrain(&data).unwrap();

    // Selection must flag and survive the degenerate scenes.
    let selections =
        select_scenes(&data, &early, &late, &data.config.selection, SelectorKind::Gravos).unwrap();
    let degenerate_count = selections.iter().filter(|s| s.degenerate).count();
    assert!(
        degenerate_count >= 3,
        "expected the empty/single-point/zero-gt scenes to take the degenerate-selection \
         fallback, got {degenerate_count}"
    );
    // The fallback keeps the top-budget late prefix.
    for (sel, p) in selections.iter().zip(&data.train) {
        if sel.degenerate && !p.voxels.is_empty() {
            assert_eq!(sel.s_merged.len(), sel.n_vs.min(p.voxels.len()));
        }
        assert!(sel.s_merged.len() <= p.voxels.len());
    }

    // Fine-tune on the restricted sets and evaluate without panicking.
    let ft_seed = derive_seed(99, "degenerate", 0);
    let (model, _) = finetune(&data, &late.params, Some(&selections), ft_seed).unwrap();
    let eval = evaluate(&data, &model).unwrap();
    // Per-class AP may be undefined (reported absent, never zero) only when a
    // class has no ground truth; the synthetic scenes here include all three.
    assert!(eval.map_3d.is_some());

    // An eval pool with no ground truth at all reports AP as absent.
    let empty_pool = vec![gravos_core::metrics::SceneEval {
        detections: vec![],
        gt_boxes: vec![],
    }];
    assert!(matches!(
        gravos_core::metrics::average_precision_pooled(&empty_pool, &MatchConfig::default()),
        Err(gravos_core::Error::UndefinedAp(_))
    ));

    eprintln!(
        "[PASS] criterion 10: degenerate scenes pass voxelize -> select -> fine-tune -> eval; \
         {degenerate_count} degenerate-selection fallbacks, undefined-AP reported as absent"
    );
}
