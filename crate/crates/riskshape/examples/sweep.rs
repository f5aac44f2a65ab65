//! Config sweep for desk-scale calibration: grid over tile length, obstacle
//! count and PPO learning rate / rollout, 500 episodes, both presets.
//!
//! cargo run --release -p riskshape --example sweep

use riskshape::agents::PpoConfig;
use riskshape::harness::{evaluate, train, AgentSpec, EvalOptions, TrainOptions};
use riskshape::reward::Preset;
use riskshape::world::WorldConfig;
use std::time::Instant;

fn main() {
    let episodes = 500;
    let tiles = [0.15, 0.17, 0.2];
    let obstacle_counts = [0usize, 2];
    let ppo_variants: Vec<(&str, PpoConfig)> = vec![
        ("base", PpoConfig::default()),
        (
            "hot",
            PpoConfig {
                policy_lr: 1e-3,
                value_lr: 1e-3,
                rollout_len: 1024,
                ..PpoConfig::default()
            },
        ),
    ];

    for &tile in &tiles {
        for &obstacles in &obstacle_counts {
            for (label, ppo) in &ppo_variants {
                let mut world = WorldConfig::default();
                world.gen.tile_length = tile;
                world.obstacle_count = obstacles;
                for seed in [0u64, 1] {
                    let mut line = format!(
                        "tile={tile} obs={obstacles} ppo={label} seed={seed}:"
                    );
                    for preset in [Preset::Default, Preset::Reshaped] {
                        let start = Instant::now();
                        let out = train(
                            &world,
                            &AgentSpec::Ppo(ppo.clone()),
                            preset.config(),
                            Some(preset),
                            &TrainOptions {
                                episodes,
                                ..TrainOptions::default()
                            },
                            seed,
                        )
                        .unwrap();
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
                        line.push_str(&format!(
                            "  {}[r={:.1} t={:.0} sd={:.1} {:?} {:.0}s]",
                            preset,
                            summary.mean_r_cum,
                            summary.mean_t_srv,
                            summary.std_r_cum,
                            causes,
                            start.elapsed().as_secs_f64()
                        ));
                    }
                    println!("{line}");
                }
            }
        }
    }
}
