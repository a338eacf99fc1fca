//! Attributes score-passing voxels to their labels, comparing the pretrained
//! model with a gravos-fine-tuned one.

use gravos_core::detector::forward_values;
use gravos_core::seed::derive_seed;
use gravos_core::trainer::{
    finetune, prepare, pretrain, select_scenes, DatasetConfig, ExperimentConfig, SelectorKind,
};

fn main() {
    let mut config = ExperimentConfig {
        seed: 101,
        ..ExperimentConfig::default()
    };
    if let DatasetConfig::Synthetic { train_scenes, eval_scenes, .. } = &mut config.dataset {
        *train_scenes = 80;
        *eval_scenes = 25;
    }
    let data = prepare(&config).unwrap();
    let (early, late, _) = pretrain(&data).unwrap();
    let selections =
        select_scenes(&data, &early, &late, &data.config.selection, SelectorKind::Gravos).unwrap();
    let ft_seed = derive_seed(config.seed, "finetune", 0);
    let (gravos_model, _) = finetune(&data, &late.params, Some(&selections), ft_seed).unwrap();

    for (name, model) in [("pretrained", &late.params), ("gravos-ft", &gravos_model)] {
        for threshold in [0.5, 0.7, 0.9, 0.97] {
            let mut passing: std::collections::BTreeMap<&str, usize> = Default::default();
            for p in &data.eval {
                let labels = gravos_core::voxelizer::label_voxels(&p.voxels, &p.scene);
                let pred = forward_values(&p.voxels, &p.scene, model).unwrap();
                for (row, l) in pred.rows.iter().zip(&labels) {
                    let probs = row.probabilities();
                    let best = probs[..3].iter().cloned().fold(f64::MIN, f64::max);
                    if best >= threshold {
                        *passing.entry(l.name()).or_insert(0) += 1;
                    }
                }
            }
            println!("{name} thr {threshold}: passing voxels by label {passing:?}");
        }
        let mut d = data.clone();
        for threshold in [0.5, 0.8, 0.9, 0.97] {
            d.config.eval.score_threshold = threshold;
            let eval = gravos_core::trainer::evaluate(&d, model).unwrap();
            println!(
                "{name} thr {threshold}: mAP {:.4} {:?} dets {}",
                eval.map_3d.unwrap_or(f64::NAN), eval.ap_3d, eval.n_detections
            );
        }
    }
}
