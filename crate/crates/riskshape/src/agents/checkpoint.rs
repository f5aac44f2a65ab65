//! Self-contained agent checkpoints: architecture, flat parameters, optimizer
//! moments, RNG state and enough world/reward configuration to rebuild the
//! training environment for evaluation. Serialized as versioned JSON; the
//! save/load round trip is exact.

use super::{AgentKind, DdpgConfig, DqnConfig, PpoConfig};
use crate::env::ObsMode;
use crate::nn::{AdamState, NetCheckpoint};
use crate::reward::RewardConfig;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("checkpoint does not parse: {0}")]
    Parse(String),
    #[error("checkpoint is missing network '{0}'")]
    MissingNet(String),
    #[error("checkpoint/architecture mismatch: {0}")]
    Mismatch(String),
}

/// Exact, serializable state of a seeded ChaCha stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Hyperparameters of whichever agent was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AgentConfigSnapshot {
    Dqn(DqnConfig),
    Ddpg(DdpgConfig),
    Ppo(PpoConfig),
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedNet {
    pub name: String,
    pub net: NetCheckpoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedOptim {
    pub name: String,
    pub state: AdamState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: u32,
    pub agent: AgentKind,
    pub episodes_trained: usize,
    /// Rebuilds the training world (track, obstacles, dynamics) for eval.
    pub world: crate::world::WorldConfig,
    pub reward: RewardConfig,
    /// Preset name when the reward came from one, for reporting.
    pub preset: Option<String>,
    pub obs_mode: ObsMode,
    pub agent_config: AgentConfigSnapshot,
    pub nets: Vec<NamedNet>,
    pub optims: Vec<NamedOptim>,
    pub action_rng: RngState,
    pub episode_seed_rng: RngState,
}

impl AgentCheckpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(json: &str) -> Result<AgentCheckpoint, CheckpointError> {
        let ckpt: AgentCheckpoint =
            serde_json::from_str(json).map_err(|e| CheckpointError::Parse(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ckpt.version));
        }
        Ok(ckpt)
    }

    pub fn net(&self, name: &str) -> Result<&NetCheckpoint, CheckpointError> {
        self.nets
            .iter()
            .find(|n| n.name == name)
            .map(|n| &n.net)
            .ok_or_else(|| CheckpointError::MissingNet(name.to_string()))
    }

    pub fn optim(&self, name: &str) -> Result<&AdamState, CheckpointError> {
        self.optims
            .iter()
            .find(|n| n.name == name)
            .map(|n| &n.state)
            .ok_or_else(|| CheckpointError::MissingNet(name.to_string()))
    }
}
