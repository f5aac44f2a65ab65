//! Risk-aware reward composition and episode termination rules.
//!
//! The per-step reward is a sum of four independently gated terms: a positive
//! exploration bonus for entering a fresh tile, a heavy collision penalty, a
//! mild penalty for driving on grass, and a constant per-step alive penalty.
//! Two ready-made presets ("default" and "reshaped") differ in how strongly
//! they reward exploration and punish risky driving, and in episode length.

use crate::env::StepEvents;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("unknown reward preset '{0}' (expected 'default' or 'reshaped')")]
    UnknownPreset(String),
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

/// The six shaping constants plus the risk-timeout and the cumulative-reward
/// termination limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Bonus for entering an unvisited tile. Positive.
    pub r_exp: f64,
    /// Penalty for colliding with an obstacle. Negative.
    pub r_obs: f64,
    /// Penalty per step spent off the track. Negative.
    pub r_out: f64,
    /// Penalty applied on every step. Negative.
    pub r_alive: f64,
    /// Step limit per training episode.
    pub n_eps: usize,
    /// Maximum continuous off-track time before termination, seconds.
    pub t_out_s: f64,
    /// Upper cumulative-reward termination limit. Positive.
    pub r_up: f64,
    /// Lower cumulative-reward termination limit. Negative.
    pub r_down: f64,
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let mut problems = Vec::new();
        if !(self.r_exp > 0.0) {
            problems.push("r_exp must be > 0");
        }
        if !(self.r_obs < 0.0) {
            problems.push("r_obs must be < 0");
        }
        if !(self.r_out < 0.0) {
            problems.push("r_out must be < 0");
        }
        if !(self.r_alive < 0.0) {
            problems.push("r_alive must be < 0");
        }
        if self.n_eps == 0 {
            problems.push("n_eps must be > 0");
        }
        if !(self.t_out_s > 0.0) {
            problems.push("t_out_s must be > 0");
        }
        if !(self.r_up > 0.0) {
            problems.push("r_up must be > 0");
        }
        if !(self.r_down < 0.0) {
            problems.push("r_down must be < 0");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(RewardError::InvalidConfig(problems.join("; ")))
        }
    }

    /// Number of consecutive off-track steps tolerated before the risk
    /// timeout fires (termination on the step *after* this many).
    pub fn risk_timeout_steps(&self, dt: f64) -> usize {
        (self.t_out_s / dt).ceil() as usize
    }
}

/// Named preset selecting one of the two studied reward functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Default,
    Reshaped,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Default, Preset::Reshaped];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Default => "default",
            Preset::Reshaped => "reshaped",
        }
    }

    pub fn config(self) -> RewardConfig {
        match self {
            Preset::Default => RewardConfig {
                r_exp: 1.0,
                r_obs: -600.0,
                r_out: -1.0,
                r_alive: -1.0,
                n_eps: 700,
                t_out_s: 5.0,
                r_up: 3000.0,
                r_down: -400.0,
            },
            Preset::Reshaped => RewardConfig {
                r_exp: 1.4,
                r_obs: -600.0,
                r_out: -200.0,
                r_alive: -1.0,
                n_eps: 1200,
                t_out_s: 5.0,
                r_up: 3000.0,
                r_down: -400.0,
            },
        }
    }
}

impl FromStr for Preset {
    type Err = RewardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(Preset::Default),
            "reshaped" => Ok(Preset::Reshaped),
            other => Err(RewardError::UnknownPreset(other.to_string())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Looks up a preset by name.
pub fn preset(name: &str) -> Result<RewardConfig, RewardError> {
    Ok(Preset::from_str(name)?.config())
}

/// The five ways an episode can end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    Collision,
    StepLimit,
    RiskTimeout,
    RewardUpper,
    RewardLower,
}

impl TerminationCause {
    pub const ALL: [TerminationCause; 5] = [
        TerminationCause::Collision,
        TerminationCause::StepLimit,
        TerminationCause::RiskTimeout,
        TerminationCause::RewardUpper,
        TerminationCause::RewardLower,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TerminationCause::Collision => "collision",
            TerminationCause::StepLimit => "step_limit",
            TerminationCause::RiskTimeout => "risk_timeout",
            TerminationCause::RewardUpper => "reward_upper",
            TerminationCause::RewardLower => "reward_lower",
        }
    }
}

impl fmt::Display for TerminationCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TerminationCause {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TerminationCause::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown termination cause '{s}'"))
    }
}

/// Running totals for one episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeAccumulator {
    pub cum_reward: f64,
    pub step_count: usize,
    pub consecutive_off_track_steps: usize,
}

/// The shaped reward for one step: each term is added only when its gating
/// event is true, plus the unconditional alive penalty.
pub fn compute_reward(events: &StepEvents, config: &RewardConfig) -> f64 {
    let mut reward = config.r_alive;
    if events.new_tile {
        reward += config.r_exp;
    }
    if events.collided {
        reward += config.r_obs;
    }
    if events.off_track {
        reward += config.r_out;
    }
    reward
}

/// Evaluates the five termination conditions against an accumulator that has
/// already absorbed the current step.
///
/// Causes are checked in a fixed priority order so simultaneous conditions
/// resolve deterministically: collision, then the lower and upper reward
/// limits, then the risk timeout, then (outside test mode) the step limit.
pub fn check_termination(
    acc: &EpisodeAccumulator,
    events: &StepEvents,
    config: &RewardConfig,
    dt: f64,
    test_mode: bool,
) -> Option<TerminationCause> {
    if events.collided {
        return Some(TerminationCause::Collision);
    }
    if acc.cum_reward <= config.r_down {
        return Some(TerminationCause::RewardLower);
    }
    if acc.cum_reward >= config.r_up {
        return Some(TerminationCause::RewardUpper);
    }
    if acc.consecutive_off_track_steps > config.risk_timeout_steps(dt) {
        return Some(TerminationCause::RiskTimeout);
    }
    if !test_mode && acc.step_count >= config.n_eps {
        return Some(TerminationCause::StepLimit);
    }
    None
}
