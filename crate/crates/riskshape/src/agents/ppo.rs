//! Proximal policy optimization with a clipped surrogate objective and
//! generalized advantage estimation, over the discrete action set.

use super::{AgentError, EpisodeOutcome};
use crate::env::{Action, EnvAction, RacingEnv, TraceRecord};
use crate::nn::{argmax, log_softmax, Activation, Adam, DenseNet};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    /// Optimization epochs per collected rollout.
    pub epochs: usize,
    pub rollout_len: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    /// When set, the entropy coefficient anneals linearly from
    /// `entropy_coef` to this value over the training run.
    pub entropy_coef_final: Option<f64>,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            epochs: 4,
            rollout_len: 2048,
            minibatch_size: 64,
            entropy_coef: 0.01,
            entropy_coef_final: None,
            policy_lr: 3e-4,
            value_lr: 3e-4,
            hidden: vec![64, 64],
        }
    }
}

impl PpoConfig {
    /// Entropy coefficient at `progress` in [0, 1] through the run.
    pub fn entropy_at(&self, progress: f64) -> f64 {
        match self.entropy_coef_final {
            Some(end) => {
                let p = progress.clamp(0.0, 1.0);
                self.entropy_coef + (end - self.entropy_coef) * p
            }
            None => self.entropy_coef,
        }
    }
}

/// On-policy trajectory with per-step log-probabilities and value estimates.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Value of the state following the last step; ignored wherever the last
    /// step terminated its episode.
    pub bootstrap_value: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn push(
        &mut self,
        state: Vec<f64>,
        action: usize,
        reward: f64,
        done: bool,
        log_prob: f64,
        value: f64,
    ) {
        self.states.push(state);
        self.actions.push(action);
        self.rewards.push(reward);
        self.dones.push(done);
        self.log_probs.push(log_prob);
        self.values.push(value);
    }

    /// Computes GAE advantages and returns in place.
    pub fn compute_gae(&mut self, gamma: f64, lambda: f64) {
        let (adv, ret) = ppo_gae(
            &self.rewards,
            &self.values,
            &self.dones,
            self.bootstrap_value,
            gamma,
            lambda,
        );
        self.advantages = adv;
        self.returns = ret;
    }
}

/// Generalized advantage estimation over a (possibly multi-episode) rollout.
///
/// `delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)`, advantages
/// accumulate `(gamma * lambda)`-discounted deltas truncated at episode ends,
/// and returns are `A_t + V(s_t)`.
pub fn ppo_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let t = rewards.len();
    assert_eq!(values.len(), t);
    assert_eq!(dones.len(), t);
    let mut advantages = vec![0.0; t];
    let mut acc = 0.0;
    for i in (0..t).rev() {
        let next_value = if i + 1 < t { values[i + 1] } else { bootstrap_value };
        let nonterminal = if dones[i] { 0.0 } else { 1.0 };
        let delta = rewards[i] + gamma * next_value * nonterminal - values[i];
        acc = delta + gamma * lambda * nonterminal * acc;
        advantages[i] = acc;
    }
    let returns = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    (advantages, returns)
}

#[derive(Debug, Clone, Copy)]
pub struct PpoUpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
}

/// Policy and value networks plus their optimizers.
#[derive(Debug, Clone)]
pub struct PpoCore {
    pub policy: DenseNet,
    pub value: DenseNet,
    pub optim_policy: Adam,
    pub optim_value: Adam,
    pub cfg: PpoConfig,
}

impl PpoCore {
    pub fn new(obs_dim: usize, n_actions: usize, cfg: &PpoConfig, seed: u64) -> Self {
        let mut policy_dims = vec![obs_dim];
        policy_dims.extend(&cfg.hidden);
        policy_dims.push(n_actions);
        let policy = DenseNet::new(&policy_dims, Activation::Tanh, Activation::Identity, seed);

        let mut value_dims = vec![obs_dim];
        value_dims.extend(&cfg.hidden);
        value_dims.push(1);
        let value = DenseNet::new(
            &value_dims,
            Activation::Tanh,
            Activation::Identity,
            seed.wrapping_add(1),
        );

        let optim_policy = Adam::new(&policy, cfg.policy_lr);
        let optim_value = Adam::new(&value, cfg.value_lr);
        PpoCore {
            policy,
            value,
            optim_policy,
            optim_value,
            cfg: cfg.clone(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.policy.output_dim()
    }

    /// Log-probabilities of all actions at `obs`.
    pub fn log_probs(&self, obs: &[f64]) -> Vec<f64> {
        let logits = self.policy.infer1(obs).expect("obs width matches policy");
        log_softmax(&logits)
    }

    pub fn value_of(&self, obs: &[f64]) -> f64 {
        self.value.infer1(obs).expect("obs width matches value net")[0]
    }

    /// Samples an action from the current policy; returns the action, its
    /// log-probability and the state value estimate.
    pub fn sample_action(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> (usize, f64, f64) {
        let log_probs = self.log_probs(obs);
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        let mut action = log_probs.len() - 1;
        for (i, lp) in log_probs.iter().enumerate() {
            cum += lp.exp();
            if u < cum {
                action = i;
                break;
            }
        }
        (action, log_probs[action], self.value_of(obs))
    }

    /// Deterministic evaluation-mode action: argmax of the logits.
    pub fn greedy_action(&self, obs: &[f64]) -> usize {
        let logits = self.policy.infer1(obs).expect("obs width matches policy");
        argmax(&logits)
    }

    /// Clipped-surrogate update: `epochs` passes of shuffled minibatches over
    /// the rollout. Advantages are normalized over the whole rollout first.
    ///
    /// A non-finite loss aborts the update and rolls both networks and
    /// optimizers back to their pre-update state.
    pub fn update(
        &mut self,
        rollout: &Rollout,
        rng: &mut ChaCha8Rng,
    ) -> Result<PpoUpdateStats, AgentError> {
        let t = rollout.len();
        if t == 0 {
            return Err(AgentError::EmptyRollout);
        }
        assert_eq!(
            rollout.advantages.len(),
            t,
            "compute_gae before update"
        );

        let mean = rollout.advantages.iter().sum::<f64>() / t as f64;
        let var = rollout
            .advantages
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / t as f64;
        let std = var.sqrt();
        let norm_adv: Vec<f64> = rollout
            .advantages
            .iter()
            .map(|a| (a - mean) / (std + 1e-8))
            .collect();

        let snapshot = (
            self.policy.flat_params(),
            self.value.flat_params(),
            self.optim_policy.clone(),
            self.optim_value.clone(),
        );
        let rollback = |core: &mut PpoCore, snap: &(Vec<f64>, Vec<f64>, Adam, Adam)| {
            core.policy.set_flat_params(&snap.0).expect("same arch");
            core.value.set_flat_params(&snap.1).expect("same arch");
            core.optim_policy = snap.2.clone();
            core.optim_value = snap.3.clone();
        };

        let obs_dim = self.policy.input_dim();
        let n_actions = self.n_actions();
        let clip = self.cfg.clip_ratio;
        let ent_coef = self.cfg.entropy_coef;

        let mut sum_policy_loss = 0.0;
        let mut sum_value_loss = 0.0;
        let mut sum_clip_fraction = 0.0;
        let mut minibatches = 0usize;

        let mut order: Vec<usize> = (0..t).collect();
        for _epoch in 0..self.cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(self.cfg.minibatch_size.max(1)) {
                let b = chunk.len();
                let mut states = Array2::zeros((b, obs_dim));
                for (row, &idx) in chunk.iter().enumerate() {
                    for (col, &v) in rollout.states[idx].iter().enumerate() {
                        states[[row, col]] = v;
                    }
                }

                // Policy pass.
                let cache = self.policy.forward(&states)?;
                let mut gout = Array2::zeros((b, n_actions));
                let mut policy_loss = 0.0;
                let mut entropy_sum = 0.0;
                let mut clipped = 0usize;
                for (row, &idx) in chunk.iter().enumerate() {
                    let logits = cache.output.row(row).to_vec();
                    let log_probs = log_softmax(&logits);
                    let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
                    let a = rollout.actions[idx];
                    let adv = norm_adv[idx];

                    let ratio = (log_probs[a] - rollout.log_probs[idx]).exp();
                    let ratio_clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
                    let surr_plain = ratio * adv;
                    let surr_clipped = ratio_clipped * adv;
                    policy_loss += -surr_plain.min(surr_clipped);
                    if ratio < 1.0 - clip || ratio > 1.0 + clip {
                        clipped += 1;
                    }

                    let entropy: f64 = -log_probs
                        .iter()
                        .zip(&probs)
                        .map(|(lp, p)| p * lp)
                        .sum::<f64>();
                    entropy_sum += entropy;

                    // d(-surrogate)/d(logits): active only on the unclipped
                    // branch; the clipped branch is flat in the parameters.
                    let surr_active = surr_plain <= surr_clipped;
                    for j in 0..n_actions {
                        let onehot = if j == a { 1.0 } else { 0.0 };
                        let mut g = 0.0;
                        if surr_active {
                            g += -adv * ratio * (onehot - probs[j]);
                        }
                        // entropy bonus: d(-c_ent * H)/d(logits)
                        g += ent_coef * probs[j] * (log_probs[j] + entropy);
                        gout[[row, j]] = g / b as f64;
                    }
                }
                let policy_loss = policy_loss / b as f64;
                let entropy_mean = entropy_sum / b as f64;
                let total_policy_objective = policy_loss - ent_coef * entropy_mean;
                if !total_policy_objective.is_finite() {
                    rollback(self, &snapshot);
                    return Err(AgentError::NonFiniteLoss("ppo policy loss".into()));
                }
                let (grads, _) = self.policy.backward(&cache, &gout)?;
                if let Err(e) = self.optim_policy.step(&mut self.policy, &grads) {
                    rollback(self, &snapshot);
                    return Err(e.into());
                }

                // Value pass: plain regression to the returns.
                let vcache = self.value.forward(&states)?;
                let mut vgout = Array2::zeros((b, 1));
                let mut value_loss = 0.0;
                for (row, &idx) in chunk.iter().enumerate() {
                    let err = vcache.output[[row, 0]] - rollout.returns[idx];
                    value_loss += err * err;
                    vgout[[row, 0]] = 2.0 * err / b as f64;
                }
                let value_loss = value_loss / b as f64;
                if !value_loss.is_finite() {
                    rollback(self, &snapshot);
                    return Err(AgentError::NonFiniteLoss("ppo value loss".into()));
                }
                let (vgrads, _) = self.value.backward(&vcache, &vgout)?;
                if let Err(e) = self.optim_value.step(&mut self.value, &vgrads) {
                    rollback(self, &snapshot);
                    return Err(e.into());
                }

                sum_policy_loss += policy_loss;
                sum_value_loss += value_loss;
                sum_clip_fraction += clipped as f64 / b as f64;
                minibatches += 1;
            }
        }

        Ok(PpoUpdateStats {
            policy_loss: sum_policy_loss / minibatches as f64,
            value_loss: sum_value_loss / minibatches as f64,
            clip_fraction: sum_clip_fraction / minibatches as f64,
        })
    }
}

struct ActiveEpisode {
    seed: u64,
    action_counts: [u64; Action::COUNT],
    obs: Vec<f64>,
}

/// Gathers on-policy rollouts from the racing environment, resetting episodes
/// as they end and carrying partial episodes across rollout boundaries.
pub struct Collector {
    episode_seed_rng: ChaCha8Rng,
    active: Option<ActiveEpisode>,
}

impl Collector {
    pub fn new(episode_seed_rng: ChaCha8Rng) -> Self {
        Collector {
            episode_seed_rng,
            active: None,
        }
    }

    /// Hands the episode-seed stream back to the caller (for checkpointing).
    pub fn into_episode_seed_rng(self) -> ChaCha8Rng {
        self.episode_seed_rng
    }

    /// Collects up to `max_steps` transitions, stopping early once
    /// `max_episodes` episodes have completed (when given). Returns the
    /// rollout and the episodes that finished during it. When `trace_buf` is
    /// given, every step also appends a trace record to it.
    pub fn collect(
        &mut self,
        core: &PpoCore,
        env: &mut RacingEnv,
        max_steps: usize,
        max_episodes: Option<usize>,
        rng: &mut ChaCha8Rng,
        mut trace_buf: Option<&mut Vec<TraceRecord>>,
    ) -> Result<(Rollout, Vec<EpisodeOutcome>), AgentError> {
        let mut rollout = Rollout::default();
        let mut finished = Vec::new();

        while rollout.len() < max_steps {
            if let Some(max) = max_episodes {
                if finished.len() >= max {
                    break;
                }
            }
            if self.active.is_none() {
                let seed = self.episode_seed_rng.next_u64();
                let obs = env.reset(seed);
                self.active = Some(ActiveEpisode {
                    seed,
                    action_counts: [0; Action::COUNT],
                    obs: obs.values,
                });
            }

            let active = self.active.as_mut().expect("episode just ensured");
            let (action, log_prob, value) = core.sample_action(&active.obs, rng);
            let outcome = env.step_discrete(Action::from_index(action))?;
            active.action_counts[action] += 1;

            if let Some(buf) = trace_buf.as_deref_mut() {
                buf.push(TraceRecord {
                    t: outcome.events.step_index,
                    action: EnvAction::Discrete(Action::from_index(action)),
                    reward: outcome.reward,
                    events: outcome.events,
                    cum_reward: env.accumulator().cum_reward,
                    cause: outcome.cause,
                });
            }

            let prev_obs = std::mem::replace(&mut active.obs, outcome.observation.values);
            rollout.push(prev_obs, action, outcome.reward, outcome.done, log_prob, value);

            if outcome.done {
                let acc = env.accumulator();
                finished.push(EpisodeOutcome {
                    episode_seed: active.seed,
                    t_srv: acc.step_count,
                    r_cum: acc.cum_reward,
                    cause: outcome.cause.expect("done implies a cause"),
                    action_counts: active.action_counts,
                });
                self.active = None;
            }
        }

        rollout.bootstrap_value = match &self.active {
            Some(active) => core.value_of(&active.obs),
            None => 0.0,
        };
        Ok((rollout, finished))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn gae_single_terminal_step_is_the_reward() {
        let (adv, ret) = ppo_gae(&[2.5], &[0.0], &[true], 0.0, 0.99, 0.95);
        assert_eq!(adv, vec![2.5]);
        assert_eq!(ret, vec![2.5]);
    }

    #[test]
    fn gae_lambda_zero_is_one_step_td() {
        let rewards = [1.0, -1.0, 0.5, 2.0];
        let values = [0.3, 0.1, -0.2, 0.4];
        let dones = [false, false, true, false];
        let bootstrap = 0.7;
        let gamma = 0.9;
        let (adv, _) = ppo_gae(&rewards, &values, &dones, bootstrap, gamma, 0.0);
        for i in 0..4 {
            let next = if i + 1 < 4 { values[i + 1] } else { bootstrap };
            let nonterm = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next * nonterm - values[i];
            assert!((adv[i] - delta).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _case in 0..50 {
            let t = 10;
            let rewards: Vec<f64> = (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let values: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dones: Vec<bool> = (0..t).map(|_| rng.gen::<f64>() < 0.2).collect();
            let bootstrap: f64 = rng.gen_range(-1.0..1.0);
            let gamma = 0.97;
            let lambda = 0.9;

            let (adv, ret) = ppo_gae(&rewards, &values, &dones, bootstrap, gamma, lambda);

            // brute force: A_t = sum_k (gamma*lambda)^k delta_{t+k}, truncated
            // at the first episode end at or after t
            for start in 0..t {
                let mut want = 0.0;
                let mut factor = 1.0;
                for k in start..t {
                    let next = if k + 1 < t { values[k + 1] } else { bootstrap };
                    let nonterm = if dones[k] { 0.0 } else { 1.0 };
                    let delta = rewards[k] + gamma * next * nonterm - values[k];
                    want += factor * delta;
                    if dones[k] {
                        break;
                    }
                    factor *= gamma * lambda;
                }
                assert!(
                    (adv[start] - want).abs() < 1e-10,
                    "t={start}: {} vs {}",
                    adv[start],
                    want
                );
                assert!((ret[start] - (want + values[start])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sampled_actions_follow_uniform_logits() {
        let cfg = PpoConfig {
            hidden: vec![8],
            ..PpoConfig::default()
        };
        let mut core = PpoCore::new(3, 5, &cfg, 0);
        // zero the policy so every action has probability 0.2
        let zeros = vec![0.0; core.policy.param_count()];
        core.policy.set_flat_params(&zeros).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut counts = [0usize; 5];
        let draws = 100_000;
        for _ in 0..draws {
            let (a, lp, _) = core.sample_action(&[0.1, 0.2, 0.3], &mut rng);
            counts[a] += 1;
            assert!((lp - (0.2f64).ln()).abs() < 1e-12);
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.2).abs() < 0.01, "freq {freq}");
        }
    }

    #[test]
    fn policy_distribution_is_proper() {
        let core = PpoCore::new(4, 5, &PpoConfig::default(), 13);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let obs: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let lp = core.log_probs(&obs);
            let total: f64 = lp.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(lp.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_advantages_and_no_entropy_leave_policy_unchanged() {
        let cfg = PpoConfig {
            entropy_coef: 0.0,
            epochs: 1,
            minibatch_size: 4,
            ..PpoConfig::default()
        };
        let mut core = PpoCore::new(2, 3, &cfg, 5);
        let before = core.policy.flat_params();

        let mut rollout = Rollout::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..8 {
            let obs = vec![i as f64 * 0.1, -0.2];
            let (a, lp, v) = core.sample_action(&obs, &mut rng);
            rollout.push(obs, a, 0.0, i == 7, lp, v);
        }
        rollout.bootstrap_value = 0.0;
        rollout.advantages = vec![0.0; 8];
        rollout.returns = rollout.values.clone();

        core.update(&rollout, &mut rng).unwrap();
        assert_eq!(core.policy.flat_params(), before);
    }

    #[test]
    fn first_update_has_unit_ratios_and_no_clipping() {
        let cfg = PpoConfig {
            epochs: 1,
            minibatch_size: 64, // single minibatch
            ..PpoConfig::default()
        };
        let mut core = PpoCore::new(2, 3, &cfg, 5);
        let mut rollout = Rollout::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..16 {
            let obs = vec![i as f64 * 0.05, 0.3];
            let (a, lp, v) = core.sample_action(&obs, &mut rng);
            rollout.push(obs, a, rng.gen_range(-1.0..1.0), false, lp, v);
        }
        rollout.bootstrap_value = core.value_of(&[0.8, 0.3]);
        rollout.compute_gae(cfg.gamma, cfg.gae_lambda);

        let stats = core.update(&rollout, &mut rng).unwrap();
        assert_eq!(stats.clip_fraction, 0.0);
    }

    #[test]
    fn stored_log_probs_match_reevaluation() {
        let core = PpoCore::new(3, 4, &PpoConfig::default(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let obs: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (a, lp, _) = core.sample_action(&obs, &mut rng);
            let reevaluated = core.log_probs(&obs)[a];
            assert!((lp - reevaluated).abs() < 1e-9);
        }
    }
}
