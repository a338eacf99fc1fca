//! Prints voxel statistics and per-scene training-pass timings for the
//! default synthetic configuration. Useful when sizing experiments for a
//! time budget.

use std::time::Instant;

use gravos_core::detector::{build_total_loss, DetectorParams, LossOpts};
use gravos_core::scene::generate_scene;
use gravos_core::seed::derive_seed;
use gravos_core::trainer::{self, ExperimentConfig};
use gravos_core::voxelizer::voxelize;

fn main() {
    let config = ExperimentConfig::default();
    let synth = match &config.dataset {
        trainer::DatasetConfig::Synthetic { synth, .. } => synth.clone(),
        _ => unreachable!(),
    };
    let n = 20;
    let scenes: Vec<_> = (0..n)
        .map(|i| {
            let mut c = synth.clone();
            c.seed = derive_seed(1234, "probe", i);
            generate_scene(&c).unwrap()
        })
        .collect();
    let voxel_sets: Vec<_> = scenes
        .iter()
        .map(|s| voxelize(s, &config.grid, config.pretrain.max_points, 7).unwrap())
        .collect();

    let params = DetectorParams::init(Default::default(), 1);
    let mean_points: f64 =
        scenes.iter().map(|s| s.points.len() as f64).sum::<f64>() / n as f64;
    let mean_voxels: f64 = voxel_sets.iter().map(|v| v.len() as f64).sum::<f64>() / n as f64;
    let mut positives = 0usize;
    let mut graph_nodes = 0usize;

    let t0 = Instant::now();
    for (s, vs) in scenes.iter().zip(&voxel_sets) {
        let mut built = build_total_loss(vs, s, &params, &LossOpts::default()).unwrap();
        built.forward.graph.backward_unchecked();
        positives += built.n_positive;
        graph_nodes += built.forward.graph.len();
    }
    let per_scene = t0.elapsed().as_secs_f64() / n as f64;

    // Cached-graph steady-state epoch cost: train a few epochs over the
    // probe scenes and time the later ones.
    let prepared: Vec<_> = scenes.iter().zip(&voxel_sets).map(|(s, v)| (s, v)).collect();
    let tc = gravos_core::detector::TrainConfig {
        epochs: 4,
        ..Default::default()
    };
    let t1 = Instant::now();
    gravos_core::detector::train_on_prepared(&prepared, params.clone(), &tc, &[4]).unwrap();
    let per_epoch_cached = t1.elapsed().as_secs_f64() / 4.0 / n as f64;

    println!("scenes probed:        {n}");
    println!("mean points/scene:    {mean_points:.1}");
    println!("mean voxels/scene:    {mean_voxels:.1}");
    println!("mean positives/scene: {:.1}", positives as f64 / n as f64);
    println!(
        "positive fraction:    {:.3}",
        positives as f64 / (mean_voxels * n as f64)
    );
    println!("mean graph nodes:     {:.0}", graph_nodes as f64 / n as f64);
    println!("build+backward/scene: {:.2} ms", per_scene * 1e3);
    println!(
        "epoch cost at 200 scenes: {:.2} s (rebuild), {:.2} s (cached steady state)",
        per_scene * 200.0,
        per_epoch_cached * 200.0
    );
}
