//! Mirrors the heavy acceptance block across seeds and prints mAP per model
//! at several evaluation score thresholds.
//!
//! Usage: `acceptance_probe [phase1_lr]`

use gravos_core::seed::derive_seed;
use gravos_core::selector::{select_from_magnitudes, SelectionConfig, SelectionResult};
use gravos_core::trainer::{
    evaluate, finetune, prepare, pretrain, select_scenes, ExperimentConfig, SelectorKind,
};


fn main() {
    let phase1_lr: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3e-4);
    let beta: f64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.1);
    let pretrain_epochs: usize = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(60);
    let thresholds = [0.95];

    for seed in [101u64, 202, 303] {
        let mut config = ExperimentConfig {
            seed,
            ..ExperimentConfig::default()
        };
        config.finetune.phase1_lr = phase1_lr;
        config.pretrain.beta_background = beta;
        config.pretrain.epochs = pretrain_epochs;
        if let gravos_core::trainer::DatasetConfig::Synthetic { eval_scenes, .. } =
            &mut config.dataset
        {
            *eval_scenes = 150;
        }
        let data = prepare(&config).unwrap();
        let (early, late, _) = pretrain(&data).unwrap();

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
        let gravos04: Vec<SelectionResult> = gravos08
            .iter()
            .map(|s| {
                let cfg = SelectionConfig {
                    nu_vs: 0.4,
                    ..data.config.selection
                };
                select_from_magnitudes(s.magnitudes.clone(), &cfg, s.degenerate).unwrap()
            })
            .collect();

        let ft_seed = derive_seed(seed, "acceptance-finetune", 0);
        let mut models = Vec::new();
        for (name, sel) in [
            ("gravos08", Some(&gravos08)),
            ("dropout08", Some(&dropout08)),
            ("control", None),
            ("gravos04", Some(&gravos04)),
        ] {
            let (model, _) =
                finetune(&data, &late.params, sel.map(|s| s.as_slice()), ft_seed).unwrap();
            models.push((name, model));
        }
        models.push(("pretrained", late.params.clone()));

        for threshold in thresholds {
            let mut d = data.clone();
            d.config.eval.score_threshold = threshold;
            let mut line = format!("seed {seed} thr {threshold:.2}:");
            for (name, model) in &models {
                let eval = evaluate(&d, model).unwrap();
                line.push_str(&format!(
                    " {name} {:.4}/{}",
                    eval.map_3d.unwrap_or(f64::NAN),
                    eval.n_detections
                ));
            }
            println!("{line}");
            for (name, model) in &models {
                let eval = evaluate(&d, model).unwrap();
                let g = |c: gravos_core::scene::ClassId| eval.ap_3d[&c].unwrap_or(f64::NAN);
                println!(
                    "  {name}: car {:.4} ped {:.4} cyc {:.4}",
                    g(gravos_core::scene::ClassId::Car),
                    g(gravos_core::scene::ClassId::Pedestrian),
                    g(gravos_core::scene::ClassId::Cyclist)
                );
            }
        }
    }
}
