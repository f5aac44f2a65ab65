//! Reliability probe: wider lane / gentler jitter for the reshaped
//! upper-limit streak, and light obstacle counts to give the default preset
//! genuine ending variance.

use riskshape::agents::PpoConfig;
use riskshape::harness::{evaluate, train, AgentSpec, EvalOptions, TrainOptions};
use riskshape::reward::Preset;
use riskshape::world::WorldConfig;

fn world(half_width: f64, jitter: f64, obstacles: usize) -> WorldConfig {
    let mut w = WorldConfig::default();
    w.gen.tile_length = 0.15;
    w.gen.base_radius = 250.0;
    w.gen.half_width = half_width;
    w.gen.radius_jitter = jitter;
    w.gen.angle_jitter = jitter;
    w.gen.max_tiles = 16000;
    w.obstacle_count = obstacles;
    w
}

fn main() {
    let ppo = PpoConfig {
        entropy_coef: 0.008,
        entropy_coef_final: Some(0.001),
        ..PpoConfig::default()
    };
    let grid: Vec<(&str, WorldConfig)> = vec![
        ("A hw10 j.25 obs0", world(10.0, 0.25, 0)),
        ("B hw8 j.35 obs2", world(8.0, 0.35, 2)),
        ("C hw10 j.25 obs2", world(10.0, 0.25, 2)),
    ];
    for (label, world) in grid {
        for seed in [0u64, 1, 2] {
            for preset in [Preset::Reshaped, Preset::Default] {
                let out = train(
                    &world,
                    &AgentSpec::Ppo(ppo.clone()),
                    preset.config(),
                    Some(preset),
                    &TrainOptions { episodes: 500, ..TrainOptions::default() },
                    seed,
                )
                .unwrap();
                let summary = evaluate(
                    &out.checkpoint,
                    &EvalOptions { n_episodes: 30, ..EvalOptions::default() },
                )
                .unwrap();
                let mut causes = std::collections::BTreeMap::new();
                for e in &summary.episodes {
                    *causes.entry(e.cause.as_str()).or_insert(0usize) += 1;
                }
                println!(
                    "{label} seed={seed} {preset}: eval r={:.1} t={:.0} sd={:.1} {causes:?}",
                    summary.mean_r_cum, summary.mean_t_srv, summary.std_r_cum
                );
            }
        }
    }
}
