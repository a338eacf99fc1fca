//! Runs one pipeline at a configurable scale and prints the headline
//! numbers: per-class AP for the selected / dropout / control models and the
//! class-balance table.
//!
//! Usage: `pipeline_probe [train_scenes] [seed]`

use gravos_core::seed::derive_seed;
use gravos_core::trainer::{
    balance_report, evaluate, finetune, prepare, pretrain, select_scenes, selection_stats,
    DatasetConfig, ExperimentConfig, SelectorKind,
};

fn main() {
    let mut config = ExperimentConfig::default();
    if let DatasetConfig::Synthetic {
        train_scenes,
        eval_scenes,
        ..
    } = &mut config.dataset
    {
        *train_scenes = std::env::args()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .unwrap_or(60);
        *eval_scenes = (*train_scenes / 4).max(10);
    }
    config.seed = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);

    let t0 = std::time::Instant::now();
    let data = prepare(&config).unwrap();
    let (early, late, curve) = pretrain(&data).unwrap();
    println!(
        "pretrain {:.0}s: loss {:.4} -> {:.4}",
        t0.elapsed().as_secs_f64(),
        curve.rows.first().unwrap().total,
        curve.rows.last().unwrap().total,
    );
    let pre = evaluate(&data, &late.params).unwrap();
    println!("pretrained:  mAP3d {:.4?} {:?}", pre.map_3d, pre.ap_3d);

    let ft_seed = derive_seed(config.seed, "finetune", 0);
    for kind in [SelectorKind::Gravos, SelectorKind::Dropout] {
        let selections = select_scenes(&data, &early, &late, &config.selection, kind).unwrap();
        let stats = selection_stats(&selections);
        let (model, _) = finetune(&data, &late.params, Some(&selections), ft_seed).unwrap();
        let eval = evaluate(&data, &model).unwrap();
        println!(
            "{kind:?}: mAP3d {:.4?} {:?} (kept {:.1}/{:.1})",
            eval.map_3d, eval.ap_3d, stats.mean_selected, stats.mean_total
        );
        if kind == SelectorKind::Gravos {
            let labels: Vec<_> = data.train.iter().map(|p| p.labels.clone()).collect();
            let balance = balance_report(&selections, &labels).unwrap();
            println!("  balance: {:?}", balance.mean_reduction);
        }
    }
    let (control, _) = finetune(&data, &late.params, None, ft_seed).unwrap();
    let eval = evaluate(&data, &control).unwrap();
    println!("control: mAP3d {:.4?} {:?}", eval.map_3d, eval.ap_3d);
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
}
