//! Algorithm-correctness oracles on toy problems: tabular value iteration on
//! a chain MDP for DQN, an analytic two-armed bandit for PPO, and a 1-D
//! control task for DDPG.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use riskshape::agents::{
    ppo_gae, ActionBounds, Collector, DdpgConfig, DdpgCore, DqnConfig, DqnCore, PpoConfig, PpoCore,
    Rollout,
};
use riskshape::env::{ObsMode, RacingEnv, Transition};
use riskshape::reward::Preset;
use riskshape::world::{generate_track, DynamicsParams, TrackGenParams};

// ---------------------------------------------------------------------------
// 5-state chain MDP: move right to reach the rewarding terminal state.

const CHAIN_N: usize = 5;
const CHAIN_GAMMA: f64 = 0.9;
const CHAIN_MAX_STEPS: usize = 30;

fn chain_step(state: usize, action: usize) -> (usize, f64, bool) {
    if action == 1 {
        let next = state + 1;
        if next == CHAIN_N - 1 {
            (next, 1.0, true)
        } else {
            (next, 0.0, false)
        }
    } else {
        (state.saturating_sub(1), 0.0, false)
    }
}

fn one_hot(state: usize) -> Vec<f64> {
    let mut v = vec![0.0; CHAIN_N];
    v[state] = 1.0;
    v
}

/// Tabular value iteration, the independent oracle for the greedy policy.
fn chain_value_iteration() -> Vec<usize> {
    let mut values = vec![0.0f64; CHAIN_N];
    for _ in 0..1000 {
        let mut next_values = values.clone();
        for s in 0..CHAIN_N - 1 {
            let mut best = f64::NEG_INFINITY;
            for a in 0..2 {
                let (s2, r, done) = chain_step(s, a);
                let q = r + if done { 0.0 } else { CHAIN_GAMMA * values[s2] };
                best = best.max(q);
            }
            next_values[s] = best;
        }
        let delta: f64 = values
            .iter()
            .zip(&next_values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next_values;
        if delta < 1e-12 {
            break;
        }
    }
    (0..CHAIN_N - 1)
        .map(|s| {
            let q: Vec<f64> = (0..2)
                .map(|a| {
                    let (s2, r, done) = chain_step(s, a);
                    r + if done { 0.0 } else { CHAIN_GAMMA * values[s2] }
                })
                .collect();
            if q[1] >= q[0] {
                1
            } else {
                0
            }
        })
        .collect()
}

#[test]
fn dqn_recovers_value_iteration_policy_on_chain() {
    let oracle = chain_value_iteration();
    assert_eq!(oracle, vec![1; CHAIN_N - 1], "oracle sanity: always right");

    let cfg = DqnConfig {
        gamma: CHAIN_GAMMA,
        warmup_steps: 64,
        batch_size: 32,
        train_every: 1,
        target_sync_steps: 100,
        lr: 2e-3,
        hidden: vec![32],
        ..DqnConfig::default()
    };
    let mut core = DqnCore::new(CHAIN_N, 2, &cfg, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(23);

    let episodes = 300;
    for ep in 0..episodes {
        let epsilon = cfg.epsilon_at(ep as f64 / episodes as f64);
        let mut state = 0usize;
        for _ in 0..CHAIN_MAX_STEPS {
            let a = core.act(&one_hot(state), epsilon, &mut rng);
            let (next, reward, done) = chain_step(state, a);
            core.record(Transition {
                state: one_hot(state),
                action: a,
                reward,
                next_state: one_hot(next),
                done,
            });
            if core.ready_to_train() {
                core.train_step(&mut rng).unwrap();
            }
            state = next;
            if done {
                break;
            }
        }
    }

    let greedy: Vec<usize> = (0..CHAIN_N - 1)
        .map(|s| core.act(&one_hot(s), 0.0, &mut rng))
        .collect();
    assert_eq!(greedy, oracle);
}

#[test]
fn dqn_solves_two_state_chain() {
    // degenerate 2-state version: one right move wins
    let cfg = DqnConfig {
        gamma: 0.9,
        warmup_steps: 32,
        batch_size: 16,
        train_every: 1,
        target_sync_steps: 50,
        lr: 2e-3,
        hidden: vec![16],
        ..DqnConfig::default()
    };
    let mut core = DqnCore::new(2, 2, &cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let step = |s: usize, a: usize| -> (usize, f64, bool) {
        if a == 1 {
            (1, 1.0, true)
        } else {
            (s, 0.0, false)
        }
    };
    for ep in 0..150 {
        let epsilon = cfg.epsilon_at(ep as f64 / 150.0);
        let mut s = 0usize;
        for _ in 0..10 {
            let obs = vec![1.0 - s as f64, s as f64];
            let a = core.act(&obs, epsilon, &mut rng);
            let (s2, r, done) = step(s, a);
            core.record(Transition {
                state: obs,
                action: a,
                reward: r,
                next_state: vec![1.0 - s2 as f64, s2 as f64],
                done,
            });
            if core.ready_to_train() {
                core.train_step(&mut rng).unwrap();
            }
            s = s2;
            if done {
                break;
            }
        }
    }
    assert_eq!(core.act(&[1.0, 0.0], 0.0, &mut rng), 1);
}

// ---------------------------------------------------------------------------
// Two-armed bandit: PPO must concentrate on the rewarding arm.

#[test]
fn ppo_solves_two_armed_bandit() {
    let cfg = PpoConfig {
        epochs: 4,
        minibatch_size: 16,
        entropy_coef: 0.01,
        policy_lr: 3e-3,
        value_lr: 3e-3,
        hidden: vec![8],
        ..PpoConfig::default()
    };
    let mut core = PpoCore::new(1, 2, &cfg, 41);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let obs = vec![0.0];

    for _update in 0..200 {
        let mut rollout = Rollout::default();
        for _ in 0..64 {
            let (a, lp, v) = core.sample_action(&obs, &mut rng);
            // arm 1 pays, arm 0 does not; every pull is its own episode
            let reward = if a == 1 { 1.0 } else { 0.0 };
            rollout.push(obs.clone(), a, reward, true, lp, v);
        }
        rollout.bootstrap_value = 0.0;
        rollout.compute_gae(cfg.gamma, cfg.gae_lambda);
        core.update(&rollout, &mut rng).unwrap();
    }

    let p_best = core.log_probs(&obs)[1].exp();
    assert!(p_best > 0.95, "P(best arm) = {p_best}");
}

// ---------------------------------------------------------------------------
// 1-D "drive to origin": DDPG mean episode cost must fall during training.

#[test]
fn ddpg_improves_on_drive_to_origin() {
    let cfg = DdpgConfig {
        gamma: 0.95,
        tau: 0.01,
        noise_scale: 0.2,
        warmup_steps: 200,
        batch_size: 32,
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        train_every: 1,
        hidden: vec![32],
        ..DdpgConfig::default()
    };
    let bounds = ActionBounds(vec![(-1.0, 1.0)]);
    let mut core = DdpgCore::new(1, bounds, &cfg, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    let episodes = 400;
    let horizon = 20;
    let mut costs = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut x: f64 = rng.gen_range(-1.0..1.0);
        let mut cost = 0.0;
        for t in 0..horizon {
            let a = core.act(&[x], cfg.noise_scale, &mut rng)[0];
            let next = (x + 0.2 * a).clamp(-1.0, 1.0);
            let reward = -next * next;
            cost += next * next;
            let done = t == horizon - 1;
            core.record(Transition {
                state: vec![x],
                action: vec![a],
                reward,
                next_state: vec![next],
                done,
            });
            if core.ready_to_train() {
                core.train_step(&mut rng).unwrap();
            }
            x = next;
        }
        costs.push(cost);
    }

    let first: f64 = costs[..100].iter().sum::<f64>() / 100.0;
    let last: f64 = costs[episodes - 100..].iter().sum::<f64>() / 100.0;
    assert!(
        last < first,
        "mean cost did not improve: first {first}, last {last}"
    );
}

// ---------------------------------------------------------------------------
// Collector behavior against the real environment.

fn tiny_env() -> RacingEnv {
    let params = TrackGenParams {
        base_radius: 40.0,
        tile_length: 2.0,
        ..TrackGenParams::default()
    };
    let track = generate_track(0, &params).unwrap();
    RacingEnv::new(
        track,
        Preset::Default.config(),
        DynamicsParams::default(),
        ObsMode::Features,
    )
}

#[test]
fn collect_one_step_yields_one_transition() {
    let core = PpoCore::new(riskshape::env::FEATURE_LEN, 5, &PpoConfig::default(), 0);
    let mut env = tiny_env();
    let mut collector = Collector::new(ChaCha8Rng::seed_from_u64(1));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (rollout, episodes) = collector
        .collect(&core, &mut env, 1, None, &mut rng, None)
        .unwrap();
    assert_eq!(rollout.len(), 1);
    assert_eq!(rollout.log_probs.len(), 1);
    assert_eq!(rollout.values.len(), 1);
    assert!(episodes.is_empty());
}

#[test]
fn collect_crosses_episode_boundaries_and_reports_outcomes() {
    let core = PpoCore::new(riskshape::env::FEATURE_LEN, 5, &PpoConfig::default(), 0);
    let mut env = tiny_env();
    let mut collector = Collector::new(ChaCha8Rng::seed_from_u64(1));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // Random-ish fresh policy episodes end within ~400 steps (reward floor),
    // so 2000 steps must contain at least one full episode.
    let (rollout, episodes) = collector
        .collect(&core, &mut env, 2000, None, &mut rng, None)
        .unwrap();
    assert_eq!(rollout.len(), 2000);
    assert!(!episodes.is_empty());
    for e in &episodes {
        assert_eq!(
            e.action_counts.iter().sum::<u64>(),
            e.t_srv as u64,
            "action counts must sum to survival time"
        );
    }
    // episode quota stops collection early
    let mut collector = Collector::new(ChaCha8Rng::seed_from_u64(1));
    let mut env2 = tiny_env();
    let (_, episodes) = collector
        .collect(&core, &mut env2, 100_000, Some(2), &mut rng, None)
        .unwrap();
    assert_eq!(episodes.len(), 2);
}

// ---------------------------------------------------------------------------
// Terminal-cutoff property: bootstrapped targets must zero out at episode
// ends. Violating the (1 - done) factor changes every one of these.

#[test]
fn terminal_cutoff_matters_in_gae() {
    let rewards = [1.0, 1.0];
    let values = [5.0, 5.0];
    let bootstrap = 5.0;
    let (with_cut, _) = ppo_gae(&rewards, &values, &[true, true], bootstrap, 0.99, 0.95);
    let (without_cut, _) = ppo_gae(&rewards, &values, &[false, false], bootstrap, 0.99, 0.95);
    assert!((with_cut[0] - (1.0 - 5.0)).abs() < 1e-12);
    assert!(with_cut[0] != without_cut[0]);
}
