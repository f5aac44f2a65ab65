//! A self-contained 2D car-racing reinforcement-learning laboratory.
//!
//! The crate provides a procedurally generated closed racing track with
//! obstacles, a 50 Hz kinematic car simulation, a risk-aware shaped reward
//! with five termination rules, three from-scratch learners (DQN, DDPG, PPO)
//! built on exact-gradient dense networks, and a deterministic experiment
//! harness that trains, evaluates and compares agents across reward presets.

pub mod agents;
pub mod env;
pub mod harness;
pub mod nn;
pub mod reward;
pub mod world;

pub use env::{Action, ContinuousControl, ObsMode, Observation, RacingEnv, DT};
pub use reward::{Preset, RewardConfig, TerminationCause};
pub use world::{Track, TrackGenParams, WorldConfig};
