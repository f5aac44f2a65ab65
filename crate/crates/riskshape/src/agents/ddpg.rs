//! Deep deterministic policy gradient: continuous actions, actor-critic with
//! Polyak-averaged target networks and Gaussian exploration noise.

use super::replay::ReplayBuffer;
use super::AgentError;
use crate::env::Transition;
use crate::nn::{Activation, Adam, DenseNet};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub gamma: f64,
    /// Polyak averaging rate for the target networks.
    pub tau: f64,
    /// Stddev of the Gaussian exploration noise added to actions.
    pub noise_scale: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub warmup_steps: usize,
    pub train_every: u64,
    pub hidden: Vec<usize>,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            gamma: 0.99,
            tau: 0.005,
            noise_scale: 0.1,
            buffer_capacity: 50_000,
            batch_size: 64,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            warmup_steps: 1000,
            train_every: 1,
            hidden: vec![64, 64],
        }
    }
}

/// Per-dimension action interval. The actor's tanh output in [-1, 1] is
/// mapped affinely onto each interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds(pub Vec<(f64, f64)>);

impl ActionBounds {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn map(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.0)
            .map(|(&o, &(lo, hi))| lo + (o + 1.0) * 0.5 * (hi - lo))
            .collect()
    }

    pub fn clamp(&self, action: &mut [f64]) {
        for (a, &(lo, hi)) in action.iter_mut().zip(&self.0) {
            *a = a.clamp(lo, hi);
        }
    }

    /// d(mapped)/d(raw) per dimension.
    fn map_derivative(&self) -> Vec<f64> {
        self.0.iter().map(|&(lo, hi)| 0.5 * (hi - lo)).collect()
    }
}

/// Actor-critic pair plus targets; action vectors live in bounded real space.
#[derive(Debug, Clone)]
pub struct DdpgCore {
    pub actor: DenseNet,
    pub actor_target: DenseNet,
    pub critic: DenseNet,
    pub critic_target: DenseNet,
    pub buffer: ReplayBuffer<Transition<Vec<f64>>>,
    pub optim_actor: Adam,
    pub optim_critic: Adam,
    pub bounds: ActionBounds,
    pub cfg: DdpgConfig,
    pub env_steps: u64,
}

impl DdpgCore {
    pub fn new(obs_dim: usize, bounds: ActionBounds, cfg: &DdpgConfig, seed: u64) -> Self {
        let act_dim = bounds.dim();
        let mut actor_dims = vec![obs_dim];
        actor_dims.extend(&cfg.hidden);
        actor_dims.push(act_dim);
        let actor = DenseNet::new(&actor_dims, Activation::Tanh, Activation::Tanh, seed);

        let mut critic_dims = vec![obs_dim + act_dim];
        critic_dims.extend(&cfg.hidden);
        critic_dims.push(1);
        let critic = DenseNet::new(
            &critic_dims,
            Activation::Relu,
            Activation::Identity,
            seed.wrapping_add(1),
        );

        let optim_actor = Adam::new(&actor, cfg.actor_lr);
        let optim_critic = Adam::new(&critic, cfg.critic_lr);
        DdpgCore {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            optim_actor,
            optim_critic,
            bounds,
            cfg: cfg.clone(),
            env_steps: 0,
        }
    }

    /// Deterministic policy output mapped into the action bounds.
    pub fn act_deterministic(&self, obs: &[f64]) -> Vec<f64> {
        let raw = self.actor.infer1(obs).expect("obs width matches actor");
        self.bounds.map(&raw)
    }

    /// Policy output plus Gaussian exploration noise, clamped into bounds.
    pub fn act(&self, obs: &[f64], noise_scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut action = self.act_deterministic(obs);
        if noise_scale > 0.0 {
            for a in action.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *a += noise_scale * n;
            }
        }
        self.bounds.clamp(&mut action);
        action
    }

    pub fn record(&mut self, transition: Transition<Vec<f64>>) {
        self.buffer.push(transition);
        self.env_steps += 1;
    }

    pub fn ready_to_train(&self) -> bool {
        self.buffer.len() >= self.cfg.warmup_steps.max(self.cfg.batch_size)
            && self.env_steps % self.cfg.train_every == 0
    }

    /// One critic regression step and one actor ascent step, then Polyak
    /// updates of both targets. Returns (critic loss, actor objective).
    pub fn train_step(&mut self, rng: &mut ChaCha8Rng) -> Result<(f64, f64), AgentError> {
        let batch_size = self.cfg.batch_size;
        if self.buffer.len() < batch_size {
            return Err(AgentError::BufferUnderfull {
                have: self.buffer.len(),
                need: batch_size,
            });
        }
        let batch = self.buffer.sample(rng, batch_size);
        let obs_dim = self.actor.input_dim();
        let act_dim = self.bounds.dim();

        let mut states = Array2::zeros((batch_size, obs_dim));
        let mut nexts = Array2::zeros((batch_size, obs_dim));
        for (i, tr) in batch.iter().enumerate() {
            for (j, &v) in tr.state.iter().enumerate() {
                states[[i, j]] = v;
            }
            for (j, &v) in tr.next_state.iter().enumerate() {
                nexts[[i, j]] = v;
            }
        }

        // Critic target: r + gamma * (1 - done) * Q'(s', pi'(s')).
        let next_raw = self.actor_target.infer(&nexts)?;
        let mut next_sa = Array2::zeros((batch_size, obs_dim + act_dim));
        for i in 0..batch_size {
            for j in 0..obs_dim {
                next_sa[[i, j]] = nexts[[i, j]];
            }
            let mapped = self.bounds.map(&next_raw.row(i).to_vec());
            for (j, &v) in mapped.iter().enumerate() {
                next_sa[[i, obs_dim + j]] = v;
            }
        }
        let q_next = self.critic_target.infer(&next_sa)?;
        let targets: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, tr)| {
                let cont = if tr.done { 0.0 } else { self.cfg.gamma };
                tr.reward + cont * q_next[[i, 0]]
            })
            .collect();

        // Critic regression on the stored actions.
        let mut sa = Array2::zeros((batch_size, obs_dim + act_dim));
        for (i, tr) in batch.iter().enumerate() {
            for j in 0..obs_dim {
                sa[[i, j]] = states[[i, j]];
            }
            for (j, &v) in tr.action.iter().enumerate() {
                sa[[i, obs_dim + j]] = v;
            }
        }
        let cache = self.critic.forward(&sa)?;
        let mut critic_loss = 0.0;
        let mut gout = Array2::zeros(cache.output.raw_dim());
        for i in 0..batch_size {
            let err = cache.output[[i, 0]] - targets[i];
            critic_loss += err * err;
            gout[[i, 0]] = 2.0 * err / batch_size as f64;
        }
        critic_loss /= batch_size as f64;
        let (critic_grads, _) = self.critic.backward(&cache, &gout)?;
        self.optim_critic.step(&mut self.critic, &critic_grads)?;

        // Actor ascends the (fresh) critic: maximize mean Q(s, pi(s)).
        let actor_cache = self.actor.forward(&states)?;
        let deriv = self.bounds.map_derivative();
        let mut actor_sa = Array2::zeros((batch_size, obs_dim + act_dim));
        for i in 0..batch_size {
            for j in 0..obs_dim {
                actor_sa[[i, j]] = states[[i, j]];
            }
            let mapped = self.bounds.map(&actor_cache.output.row(i).to_vec());
            for (j, &v) in mapped.iter().enumerate() {
                actor_sa[[i, obs_dim + j]] = v;
            }
        }
        let critic_cache = self.critic.forward(&actor_sa)?;
        let actor_objective =
            critic_cache.output.iter().sum::<f64>() / batch_size as f64;
        let q_grad = Array2::from_elem((batch_size, 1), -1.0 / batch_size as f64);
        let (_, input_grad) = self.critic.backward(&critic_cache, &q_grad)?;
        let mut actor_gout = Array2::zeros((batch_size, act_dim));
        for i in 0..batch_size {
            for j in 0..act_dim {
                actor_gout[[i, j]] = input_grad[[i, obs_dim + j]] * deriv[j];
            }
        }
        let (actor_grads, _) = self.actor.backward(&actor_cache, &actor_gout)?;
        self.optim_actor.step(&mut self.actor, &actor_grads)?;

        polyak_update(&mut self.actor_target, &self.actor, self.cfg.tau);
        polyak_update(&mut self.critic_target, &self.critic, self.cfg.tau);
        Ok((critic_loss, actor_objective))
    }
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn polyak_update(target: &mut DenseNet, online: &DenseNet, tau: f64) {
    let online_params = online.flat_params();
    let mut params = target.flat_params();
    for (t, o) in params.iter_mut().zip(online_params) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    target.set_flat_params(&params).expect("same architecture");
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn bounds3() -> ActionBounds {
        ActionBounds(vec![(-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)])
    }

    #[test]
    fn noiseless_act_is_deterministic_and_bounded() {
        let core = DdpgCore::new(4, bounds3(), &DdpgConfig::default(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = [0.1, -0.3, 0.7, 0.0];
        let a = core.act(&obs, 0.0, &mut rng);
        let b = core.act(&obs, 0.0, &mut rng);
        assert_eq!(a, b);
        assert!(a[0] >= -1.0 && a[0] <= 1.0);
        assert!(a[1] >= 0.0 && a[1] <= 1.0);
        assert!(a[2] >= 0.0 && a[2] <= 1.0);
    }

    #[test]
    fn noisy_sample_mean_close_to_noiseless() {
        let core = DdpgCore::new(4, bounds3(), &DdpgConfig::default(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs = [0.1, -0.3, 0.7, 0.0];
        let clean = core.act_deterministic(&obs);
        let draws = 10_000;
        let mut mean = vec![0.0; 3];
        for _ in 0..draws {
            let a = core.act(&obs, 0.1, &mut rng);
            for (m, v) in mean.iter_mut().zip(a) {
                *m += v;
            }
        }
        for (m, c) in mean.iter().zip(clean) {
            assert!((*m / draws as f64 - c).abs() < 0.01);
        }
    }

    #[test]
    fn tau_one_copies_online_to_target() {
        let mut core = DdpgCore::new(3, bounds3(), &DdpgConfig::default(), 8);
        // push the online actor away from the target
        let mut params = core.actor.flat_params();
        for p in params.iter_mut() {
            *p += 0.25;
        }
        core.actor.set_flat_params(&params).unwrap();
        polyak_update(&mut core.actor_target, &core.actor, 1.0);
        assert_eq!(core.actor_target.flat_params(), core.actor.flat_params());
    }

    #[test]
    fn critic_converges_to_terminal_rewards() {
        let cfg = DdpgConfig {
            warmup_steps: 1,
            batch_size: 8,
            critic_lr: 5e-3,
            hidden: vec![16],
            ..DdpgConfig::default()
        };
        let bounds = ActionBounds(vec![(-1.0, 1.0)]);
        let mut core = DdpgCore::new(2, bounds, &cfg, 21);
        for _ in 0..16 {
            core.record(Transition {
                state: vec![0.3, -0.2],
                action: vec![0.5],
                reward: 2.5,
                next_state: vec![0.0, 0.0],
                done: true,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let (critic_loss, _) = core.train_step(&mut rng).unwrap();
            assert!(critic_loss.is_finite());
        }
        let q = core
            .critic
            .infer1(&[0.3, -0.2, 0.5])
            .unwrap()[0];
        assert!((q - 2.5).abs() < 0.05, "q = {q}");
    }

    #[test]
    fn underfull_buffer_is_an_error() {
        let mut core = DdpgCore::new(2, bounds3(), &DdpgConfig::default(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            core.train_step(&mut rng),
            Err(AgentError::BufferUnderfull { .. })
        ));
    }
}
