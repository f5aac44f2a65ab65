//! Deep Q-learning over a discrete action set, with experience replay and a
//! periodically hard-synced target network.

use super::replay::ReplayBuffer;
use super::AgentError;
use crate::env::Transition;
use crate::nn::{argmax, Activation, Adam, DenseNet};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the training run over which epsilon decays linearly.
    pub eps_decay_frac: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Hard-sync period for the target network, in environment steps.
    pub target_sync_steps: u64,
    /// Run one gradient step every this many environment steps.
    pub train_every: u64,
    /// Minimum buffer fill before training starts.
    pub warmup_steps: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.99,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_frac: 0.3,
            buffer_capacity: 50_000,
            batch_size: 64,
            target_sync_steps: 1000,
            train_every: 4,
            warmup_steps: 1000,
            lr: 1e-3,
            hidden: vec![64, 64],
        }
    }
}

impl DqnConfig {
    /// Linear epsilon schedule over the fraction of training completed.
    pub fn epsilon_at(&self, progress: f64) -> f64 {
        let frac = (progress / self.eps_decay_frac).clamp(0.0, 1.0);
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

/// Epsilon-greedy action choice: uniform with probability `epsilon`,
/// otherwise the argmax of the Q row with ties to the lowest index.
pub fn dqn_act(qnet: &DenseNet, obs: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> usize {
    let n_actions = qnet.output_dim();
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return rng.gen_range(0..n_actions);
    }
    let q = qnet.infer1(obs).expect("observation width matches qnet");
    argmax(&q)
}

/// Bellman target: `r` when terminal, otherwise `r + gamma * max(q_next)`.
pub fn dqn_td_target(reward: f64, done: bool, q_next: &[f64], gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Q-learning core, reusable for any discrete-action task.
#[derive(Debug, Clone)]
pub struct DqnCore {
    pub qnet: DenseNet,
    pub target: DenseNet,
    pub buffer: ReplayBuffer<Transition<usize>>,
    pub optim: Adam,
    pub cfg: DqnConfig,
    pub env_steps: u64,
}

impl DqnCore {
    pub fn new(obs_dim: usize, n_actions: usize, cfg: &DqnConfig, seed: u64) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend(&cfg.hidden);
        dims.push(n_actions);
        let qnet = DenseNet::new(&dims, Activation::Relu, Activation::Identity, seed);
        let target = qnet.clone();
        let optim = Adam::new(&qnet, cfg.lr);
        DqnCore {
            qnet,
            target,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            optim,
            cfg: cfg.clone(),
            env_steps: 0,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.qnet.output_dim()
    }

    pub fn act(&self, obs: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> usize {
        dqn_act(&self.qnet, obs, epsilon, rng)
    }

    /// Stores a transition and advances the step counter that drives the
    /// target-sync and train-every schedules.
    pub fn record(&mut self, transition: Transition<usize>) {
        self.buffer.push(transition);
        self.env_steps += 1;
        if self.env_steps % self.cfg.target_sync_steps == 0 {
            self.target = self.qnet.clone();
        }
    }

    pub fn ready_to_train(&self) -> bool {
        self.buffer.len() >= self.cfg.warmup_steps.max(self.cfg.batch_size)
            && self.env_steps % self.cfg.train_every == 0
    }

    /// One mean-squared TD-error gradient step. Returns the batch loss.
    pub fn train_step(&mut self, rng: &mut ChaCha8Rng) -> Result<f64, AgentError> {
        let batch_size = self.cfg.batch_size;
        if self.buffer.len() < batch_size {
            return Err(AgentError::BufferUnderfull {
                have: self.buffer.len(),
                need: batch_size,
            });
        }
        let batch = self.buffer.sample(rng, batch_size);
        let obs_dim = self.qnet.input_dim();

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

        let q_next = self.target.infer(&nexts)?;
        let targets: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, tr)| {
                dqn_td_target(tr.reward, tr.done, &q_next.row(i).to_vec(), self.cfg.gamma)
            })
            .collect();

        let cache = self.qnet.forward(&states)?;
        let mut loss = 0.0;
        let mut gout = Array2::zeros(cache.output.raw_dim());
        for (i, tr) in batch.iter().enumerate() {
            let err = cache.output[[i, tr.action]] - targets[i];
            loss += err * err;
            gout[[i, tr.action]] = 2.0 * err / batch_size as f64;
        }
        loss /= batch_size as f64;

        let (grads, _) = self.qnet.backward(&cache, &gout)?;
        self.optim.step(&mut self.qnet, &grads)?;
        Ok(loss)
    }
}
