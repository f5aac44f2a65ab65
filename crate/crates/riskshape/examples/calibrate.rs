//! Quick training probe: trains PPO under both reward presets on the default
//! world and prints curve slices and evaluation summaries.
//!
//! cargo run --release -p riskshape --example calibrate -- [episodes] [seeds]

use riskshape::agents::PpoConfig;
use riskshape::harness::{evaluate, train, AgentSpec, EvalOptions, TrainOptions};
use riskshape::reward::Preset;
use riskshape::world::WorldConfig;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let episodes: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);

    let mut world = WorldConfig::default();
    if let Some(tile) = args.get(3).and_then(|s| s.parse().ok()) {
        world.gen.tile_length = tile;
    }
    if let Some(radius) = args.get(4).and_then(|s| s.parse().ok()) {
        world.gen.base_radius = radius;
    }
    if let Some(obstacles) = args.get(5).and_then(|s| s.parse().ok()) {
        world.obstacle_count = obstacles;
    }
    println!(
        "world: radius {} tile {} obstacles {}",
        world.gen.base_radius, world.gen.tile_length, world.obstacle_count
    );

    for seed in 0..seeds {
        for preset in [Preset::Default, Preset::Reshaped] {
            let start = Instant::now();
            let spec = AgentSpec::Ppo(PpoConfig::default());
            let opts = TrainOptions {
                episodes,
                ..TrainOptions::default()
            };
            let out = train(&world, &spec, preset.config(), Some(preset), &opts, seed).unwrap();

            let chunk = (episodes / 6).max(1);
            print!("seed {seed} {preset}: train ");
            for block in out.curve.points.chunks(chunk) {
                let mean_r: f64 =
                    block.iter().map(|p| p.r_cum).sum::<f64>() / block.len() as f64;
                let mean_t: f64 =
                    block.iter().map(|p| p.t_srv as f64).sum::<f64>() / block.len() as f64;
                print!("[r={mean_r:.0} t={mean_t:.0}] ");
            }
            let train_secs = start.elapsed().as_secs_f64();

            let eval_start = Instant::now();
            let summary = evaluate(
                &out.checkpoint,
                &EvalOptions {
                    n_episodes: 30,
                    ..EvalOptions::default()
                },
            )
            .unwrap();
            let mut causes = std::collections::BTreeMap::new();
            for e in &summary.episodes {
                *causes.entry(e.cause.as_str()).or_insert(0usize) += 1;
            }
            println!(
                "| eval r={:.1} t={:.0} sd={:.1} causes={:?} hist={:?} ({:.0}s train, {:.0}s eval)",
                summary.mean_r_cum,
                summary.mean_t_srv,
                summary.std_r_cum,
                causes,
                summary.action_histogram,
                train_secs,
                eval_start.elapsed().as_secs_f64(),
            );
        }
    }
}
