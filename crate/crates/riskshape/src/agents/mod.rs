//! The three learners: DQN (discrete, value-based), DDPG (continuous,
//! actor-critic) and PPO (discrete, policy-gradient), plus the shared replay
//! buffer and the continuous-to-discrete action binning used for reporting.

pub mod checkpoint;
pub mod ddpg;
pub mod dqn;
pub mod ppo;
pub mod replay;

pub use checkpoint::{AgentCheckpoint, RngState};
pub use ddpg::{polyak_update, ActionBounds, DdpgConfig, DdpgCore};
pub use dqn::{dqn_act, dqn_td_target, DqnConfig, DqnCore};
pub use ppo::{ppo_gae, Collector, PpoConfig, PpoCore, PpoUpdateStats, Rollout};
pub use replay::ReplayBuffer;

use crate::env::{discrete_to_control, Action, ContinuousControl};
use crate::nn::NnError;
use crate::reward::TerminationCause;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("replay buffer underfull: have {have}, need {need}")]
    BufferUnderfull { have: usize, need: usize },
    #[error("cannot update on an empty rollout")]
    EmptyRollout,
    #[error("non-finite loss in {0}; update aborted and parameters rolled back")]
    NonFiniteLoss(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
}

/// Which learner a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Dqn,
    Ddpg,
    Ppo,
    /// Uniform-random baseline; useful for harness and reward plumbing tests.
    Random,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Ddpg => "ddpg",
            AgentKind::Ppo => "ppo",
            AgentKind::Random => "random",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dqn" => Ok(AgentKind::Dqn),
            "ddpg" => Ok(AgentKind::Ddpg),
            "ppo" => Ok(AgentKind::Ppo),
            "random" => Ok(AgentKind::Random),
            other => Err(format!("unknown agent '{other}'")),
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Summary of one finished episode, produced by every training/eval loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode_seed: u64,
    /// Survival time in steps.
    pub t_srv: usize,
    pub r_cum: f64,
    pub cause: TerminationCause,
    pub action_counts: [u64; Action::COUNT],
}

/// Maps a continuous control onto the nearest of the five canonical discrete
/// controls (Euclidean distance over the three components, ties toward the
/// lowest action index). Used for DDPG action-count reporting.
pub fn bin_control(control: &ContinuousControl) -> Action {
    let mut best = Action::NoAction;
    let mut best_d = f64::INFINITY;
    for action in Action::ALL {
        let c = discrete_to_control(action);
        let d = (control.steer - c.steer).powi(2)
            + (control.accel - c.accel).powi(2)
            + (control.brake - c.brake).powi(2);
        if d < best_d {
            best_d = d;
            best = action;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn canonical_controls_bin_to_their_actions() {
        for action in Action::ALL {
            assert_eq!(bin_control(&discrete_to_control(action)), action);
        }
        assert_eq!(
            bin_control(&ContinuousControl::new(-1.0, 0.0, 0.0)),
            Action::SteerLeft
        );
        assert_eq!(
            bin_control(&ContinuousControl::new(0.0, 0.0, 0.0)),
            Action::NoAction
        );
    }

    #[test]
    fn binning_is_a_true_nearest_neighbor() {
        let dist = |a: &ContinuousControl, b: &ContinuousControl| {
            (a.steer - b.steer).powi(2) + (a.accel - b.accel).powi(2) + (a.brake - b.brake).powi(2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let c = ContinuousControl::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            );
            let chosen = bin_control(&c);
            let chosen_d = dist(&c, &discrete_to_control(chosen));
            for other in Action::ALL {
                let other_d = dist(&c, &discrete_to_control(other));
                assert!(chosen_d <= other_d, "{chosen:?} is not nearest for {c:?}");
                if other_d == chosen_d {
                    assert!(chosen.index() <= other.index(), "tie must break low");
                }
            }
        }
    }
}
