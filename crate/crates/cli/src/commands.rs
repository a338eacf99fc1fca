//! Subcommand implementations.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context};
use gravos_core::scene::{save_labels, save_point_bin};
use gravos_core::selector::{GradientMagnitudes, SelectionConfig, SelectionResult};
use gravos_core::trainer::{
    self, balance_csv, balance_report, parse_sweep_value, report_csv, run_pipeline, sweep_csv,
    synth_split, DatasetConfig, SweepAxis, SweepValue,
};
use gravos_core::voxelizer::{VoxelIndex, VoxelLabel};

use crate::config;

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Generates `train/` and `eval/` splits: point binaries, label CSVs, and a
/// manifest per split.
pub fn synth(config_path: &Path, out: &Path, seed: Option<u64>) -> anyhow::Result<()> {
    let config = config::load(config_path, seed)?;
    let out = config::resolve_out(out);
    let DatasetConfig::Synthetic {
        train_scenes,
        eval_scenes,
        synth,
    } = &config.dataset
    else {
        return Err(gravos_core::Error::Config(
            "synth requires a synthetic dataset section".into(),
        )
        .into());
    };
    for (split, count) in [("train", *train_scenes), ("eval", *eval_scenes)] {
        let dir = out.join(split);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let scenes = synth_split(synth, count, config.seed, split)?;
        let mut manifest = String::from("scene_id\n");
        for scene in &scenes {
            save_point_bin(scene, &dir.join(format!("{}.bin", scene.scene_id)))?;
            save_labels(&scene.gt_boxes, &dir.join(format!("{}.csv", scene.scene_id)))?;
            manifest.push_str(&scene.scene_id);
            manifest.push('\n');
        }
        write(&dir.join("manifest.csv"), &manifest)?;
    }
    write(&out.join("config.echo"), &config::echo(&config)?)?;
    Ok(())
}

/// Runs the pipeline and writes the report directory.
pub fn run(config_path: &Path, out: &Path, seed: Option<u64>) -> anyhow::Result<()> {
    let config = config::load(config_path, seed)?;
    let out = config::resolve_out(out);
    let data = trainer::prepare(&config)?;
    let artifacts = run_pipeline(&config)?;
    trainer::write_artifacts(&artifacts, &data, &out)?;
    // The echoed config is the resolved one actually used by the run.
    write(&out.join("config.echo"), &config::echo(&artifacts.report.config)?)?;
    println!(
        "report written to {} (mAP3d selected {:?}, control {:?})",
        out.display(),
        artifacts.report.selected.map_3d,
        artifacts.report.control.map_3d
    );
    Ok(())
}

/// Runs one pipeline per swept value and writes the combined CSV plus one
/// report per run.
pub fn sweep(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    axis: &str,
    values: &str,
) -> anyhow::Result<()> {
    let config = config::load(config_path, seed)?;
    let out = config::resolve_out(out);
    let axis: SweepAxis = axis.parse()?;
    let parsed: Vec<SweepValue> = if values == "grid" && axis == SweepAxis::Mechanisms {
        trainer::mechanism_grid()
            .into_iter()
            .map(|(early, late)| SweepValue::MechanismPair { early, late })
            .collect()
    } else {
        values
            .split(',')
            .map(|v| parse_sweep_value(axis, v.trim()))
            .collect::<gravos_core::Result<_>>()?
    };
    let rows = trainer::sweep(&config, axis, &parsed)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("combined.csv"), &sweep_csv(axis, &rows))?;
    for row in &rows {
        if let Ok(report) = &row.outcome {
            let dir = out.join(format!("value_{}", row.value.replace('/', "_")));
            std::fs::create_dir_all(&dir)?;
            write(&dir.join("report.csv"), &report_csv(report))?;
            write(&dir.join("balance.csv"), &balance_csv(&report.balance))?;
        }
    }
    let failures = rows.iter().filter(|r| r.outcome.is_err()).count();
    println!(
        "sweep complete: {} runs, {} failed; combined CSV at {}",
        rows.len(),
        failures,
        out.join("combined.csv").display()
    );
    Ok(())
}

fn scene_ids_of(dir: &Path) -> anyhow::Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for entry in
        std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?
    {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            if let Some(stem) = path.file_stem() {
                ids.insert(stem.to_string_lossy().into_owned());
            }
        }
    }
    Ok(ids)
}

fn parse_selection_csv(path: &Path) -> anyhow::Result<SelectionResult> {
    let text = std::fs::read_to_string(path)?;
    let mut indices = Vec::new();
    let mut early = Vec::new();
    let mut late = Vec::new();
    let mut s_early = BTreeSet::new();
    let mut s_late = BTreeSet::new();
    let mut s_merged = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            bail!(
                "{}:{}: expected 8 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            );
        }
        let idx = VoxelIndex([
            fields[0].parse()?,
            fields[1].parse()?,
            fields[2].parse()?,
        ]);
        indices.push(idx);
        early.push(fields[3].parse()?);
        late.push(fields[4].parse()?);
        if fields[5] == "1" {
            s_early.insert(idx);
        }
        if fields[6] == "1" {
            s_late.insert(idx);
        }
        if fields[7] == "1" {
            s_merged.insert(idx);
        }
    }
    let n_vs = s_merged.len();
    let n = indices.len();
    // The export does not carry the selection ratio; reconstruct it from the
    // observed kept fraction so the uniform-reference row stays meaningful.
    let nu_vs = if n == 0 {
        1.0
    } else {
        (n_vs as f64 / n as f64).clamp(f64::MIN_POSITIVE, 1.0)
    };
    Ok(SelectionResult {
        s_early,
        s_late,
        s_merged,
        magnitudes: GradientMagnitudes {
            indices,
            early,
            late,
        },
        config: SelectionConfig {
            nu_vs,
            ..SelectionConfig::default()
        },
        n_vs,
        k_late: 0,
        degenerate: false,
    })
}

fn parse_labels_csv(path: &Path) -> anyhow::Result<Vec<VoxelLabel>> {
    let text = std::fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            bail!(
                "{}:{}: expected 4 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            );
        }
        let index = VoxelIndex([
            fields[0].parse()?,
            fields[1].parse()?,
            fields[2].parse()?,
        ]);
        let label = match fields[3] {
            "Background" => None,
            name => Some(
                gravos_core::scene::ClassId::from_name(name)
                    .ok_or_else(|| gravos_core::Error::Config(format!("unknown label {name:?}")))?,
            ),
        };
        labels.push(VoxelLabel { index, label });
    }
    Ok(labels)
}

/// Recomputes the balance table from exported per-scene CSVs.
pub fn stats(selection_dir: &Path, labels_dir: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let sel_ids = scene_ids_of(selection_dir)?;
    let lab_ids = scene_ids_of(labels_dir)?;
    if sel_ids != lab_ids {
        let only_first: Vec<String> = sel_ids.difference(&lab_ids).cloned().collect();
        let only_second: Vec<String> = lab_ids.difference(&sel_ids).cloned().collect();
        return Err(gravos_core::Error::SceneSetMismatch {
            only_first,
            only_second,
        }
        .into());
    }
    let mut selections = Vec::new();
    let mut labels = Vec::new();
    for id in &sel_ids {
        selections.push(parse_selection_csv(&selection_dir.join(format!("{id}.csv")))?);
        labels.push(parse_labels_csv(&labels_dir.join(format!("{id}.csv")))?);
    }
    let table = balance_report(&selections, &labels)?;
    let csv = balance_csv(&table);
    match out {
        Some(path) => write(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
