//! Training loops with curve logging, the 100-episode deterministic test
//! protocol, action histograms and the default-vs-reshaped comparison grid.
//!
//! Every run is driven by a single `run_seed`: the network initialization,
//! the action sampling stream and the episode seed stream are all derived
//! from it, so a rerun with the same configuration produces byte-identical
//! artifacts.

use crate::agents::{
    bin_control, AgentCheckpoint, AgentError, AgentKind, Collector, DdpgConfig, DdpgCore,
    DqnConfig, DqnCore, EpisodeOutcome, PpoConfig, PpoCore,
};
use crate::agents::checkpoint::{
    AgentConfigSnapshot, CheckpointError, NamedNet, NamedOptim, RngState, CHECKPOINT_VERSION,
};
use crate::agents::ActionBounds;
use crate::env::{
    Action, ContinuousControl, EnvAction, EnvError, ObsMode, RacingEnv, TraceRecord, Transition,
    FEATURE_LEN,
};
use crate::nn::{Adam, DenseNet, NnError};
use crate::reward::{Preset, RewardConfig, RewardError, TerminationCause};
use crate::world::{WorldConfig, WorldError};
use rand::Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

/// Hard cap on a single evaluation episode; the reward floor bounds episodes
/// far below this, so hitting it indicates a reward-accounting bug.
const MAX_EVAL_STEPS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("non-finite training loss for {agent} in episode {episode}: {detail}")]
    NonFiniteLoss {
        agent: AgentKind,
        episode: usize,
        detail: String,
    },
    #[error("evaluation episode exceeded {MAX_EVAL_STEPS} steps without terminating")]
    RunawayEpisode,
}

/// Which learner to train, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AgentSpec {
    Dqn(DqnConfig),
    Ddpg(DdpgConfig),
    Ppo(PpoConfig),
    Random,
}

impl AgentSpec {
    pub fn kind(&self) -> AgentKind {
        match self {
            AgentSpec::Dqn(_) => AgentKind::Dqn,
            AgentSpec::Ddpg(_) => AgentKind::Ddpg,
            AgentSpec::Ppo(_) => AgentKind::Ppo,
            AgentSpec::Random => AgentKind::Random,
        }
    }

    pub fn with_defaults(kind: AgentKind) -> AgentSpec {
        match kind {
            AgentKind::Dqn => AgentSpec::Dqn(DqnConfig::default()),
            AgentKind::Ddpg => AgentSpec::Ddpg(DdpgConfig::default()),
            AgentKind::Ppo => AgentSpec::Ppo(PpoConfig::default()),
            AgentKind::Random => AgentSpec::Random,
        }
    }
}

/// One row of a training curve or evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub episode_seed: u64,
    /// Survival time in steps (seconds = steps * 0.02).
    pub t_srv: usize,
    pub r_cum: f64,
    pub cause: TerminationCause,
    pub action_counts: [u64; Action::COUNT],
}

impl EpisodeStats {
    fn from_outcome(episode: usize, outcome: EpisodeOutcome) -> Self {
        EpisodeStats {
            episode,
            episode_seed: outcome.episode_seed,
            t_srv: outcome.t_srv,
            r_cum: outcome.r_cum,
            cause: outcome.cause,
            action_counts: outcome.action_counts,
        }
    }
}

/// Raw per-episode training record. Smoothing is presentation-only; the raw
/// points are what gets persisted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub points: Vec<EpisodeStats>,
}

impl TrainingCurve {
    /// Trailing moving average of the episode rewards.
    pub fn smoothed_r_cum(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        self.points
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let lo = i.saturating_sub(w - 1);
                let slice = &self.points[lo..=i];
                slice.iter().map(|p| p.r_cum).sum::<f64>() / slice.len() as f64
            })
            .collect()
    }
}

/// Aggregated test scores over an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub agent: AgentKind,
    pub preset: Option<String>,
    pub n_episodes: usize,
    /// Mean survival time, steps.
    pub mean_t_srv: f64,
    pub mean_r_cum: f64,
    /// Population standard deviation (divide by n) of the episode rewards.
    pub std_r_cum: f64,
    pub action_histogram: [u64; Action::COUNT],
    pub episodes: Vec<EpisodeStats>,
}

impl EvalSummary {
    fn from_episodes(
        agent: AgentKind,
        preset: Option<String>,
        episodes: Vec<EpisodeStats>,
    ) -> Self {
        let n = episodes.len().max(1) as f64;
        let mean_t_srv = episodes.iter().map(|e| e.t_srv as f64).sum::<f64>() / n;
        let mean_r_cum = episodes.iter().map(|e| e.r_cum).sum::<f64>() / n;
        let var = episodes
            .iter()
            .map(|e| (e.r_cum - mean_r_cum).powi(2))
            .sum::<f64>()
            / n;
        EvalSummary {
            agent,
            preset,
            n_episodes: episodes.len(),
            mean_t_srv,
            mean_r_cum,
            std_r_cum: var.sqrt(),
            action_histogram: action_histogram(&episodes),
            episodes,
        }
    }
}

/// Elementwise sum of per-episode action counts.
pub fn action_histogram(stats: &[EpisodeStats]) -> [u64; Action::COUNT] {
    let mut totals = [0u64; Action::COUNT];
    for s in stats {
        for (t, c) in totals.iter_mut().zip(s.action_counts) {
            *t += c;
        }
    }
    totals
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub episodes: usize,
    pub obs_mode: ObsMode,
    /// Write per-step JSONL traces under `<out>/traces/`.
    pub trace: bool,
    /// Run directory for curve.csv, checkpoint.json and traces.
    pub out: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            episodes: 500,
            obs_mode: ObsMode::Features,
            trace: false,
            out: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub curve: TrainingCurve,
    pub checkpoint: AgentCheckpoint,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub n_episodes: usize,
    /// Episode i is seeded `base_seed + i`.
    pub base_seed: u64,
    /// Evaluate on a fresh track instead of the training track.
    pub track_seed_override: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_episodes: 100,
            base_seed: 1_000_000,
            track_seed_override: None,
            out: None,
        }
    }
}

fn obs_dim(mode: ObsMode) -> usize {
    match mode {
        ObsMode::Features => FEATURE_LEN,
        ObsMode::Raster { size } => size * size,
    }
}

/// Derives the three independent seed streams of a run.
fn derive_seeds(run_seed: u64) -> (u64, u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    (rng.next_u64(), rng.next_u64(), rng.next_u64())
}

/// Buffers trace records and writes one JSONL file per finished episode.
struct TraceSink {
    dir: PathBuf,
    prefix: String,
    episode: usize,
    pending: Vec<TraceRecord>,
}

impl TraceSink {
    fn new(out: &Path, prefix: &str) -> Result<Self, HarnessError> {
        let dir = out.join("traces");
        fs::create_dir_all(&dir)?;
        Ok(TraceSink {
            dir,
            prefix: prefix.to_string(),
            episode: 0,
            pending: Vec::new(),
        })
    }

    fn push(&mut self, record: TraceRecord) -> Result<(), HarnessError> {
        let done = record.cause.is_some();
        self.pending.push(record);
        if done {
            let mut body = String::new();
            for rec in &self.pending {
                body.push_str(&serde_json::to_string(rec).expect("trace serializes"));
                body.push('\n');
            }
            let path = self
                .dir
                .join(format!("{}_{:05}.jsonl", self.prefix, self.episode));
            fs::write(path, body)?;
            self.pending.clear();
            self.episode += 1;
        }
        Ok(())
    }
}

/// Trains one agent on one world and reward configuration. Deterministic per
/// `run_seed` when single-threaded.
pub fn train(
    world: &WorldConfig,
    agent: &AgentSpec,
    reward: RewardConfig,
    preset: Option<Preset>,
    opts: &TrainOptions,
    run_seed: u64,
) -> Result<TrainOutput, HarnessError> {
    reward.validate()?;
    let track = world.build_track()?;
    let mut env = RacingEnv::new(track, reward, world.dynamics, opts.obs_mode);
    let (net_seed, action_seed, episode_seed_seed) = derive_seeds(run_seed);
    let mut action_rng = ChaCha8Rng::seed_from_u64(action_seed);
    let mut episode_rng = ChaCha8Rng::seed_from_u64(episode_seed_seed);

    let mut sink = match (&opts.out, opts.trace) {
        (Some(out), true) => Some(TraceSink::new(out, "episode")?),
        _ => None,
    };

    let dim = obs_dim(opts.obs_mode);
    let episodes = opts.episodes;
    let mut points: Vec<EpisodeStats> = Vec::with_capacity(episodes);

    let (nets, optims, agent_config): (Vec<NamedNet>, Vec<NamedOptim>, AgentConfigSnapshot) =
        match agent {
            AgentSpec::Dqn(cfg) => {
                let mut core = DqnCore::new(dim, Action::COUNT, cfg, net_seed);
                for ep in 0..episodes {
                    let epsilon = cfg.epsilon_at(ep as f64 / episodes.max(1) as f64);
                    let outcome = run_dqn_episode(
                        &mut core,
                        &mut env,
                        epsilon,
                        &mut action_rng,
                        &mut episode_rng,
                        &mut sink,
                    )
                    .map_err(|e| wrap_loss_error(e, AgentKind::Dqn, ep, &opts.out))?;
                    points.push(EpisodeStats::from_outcome(ep, outcome));
                }
                (
                    vec![
                        named_net("qnet", &core.qnet),
                        named_net("target", &core.target),
                    ],
                    vec![named_optim("qnet", &core.optim)],
                    AgentConfigSnapshot::Dqn(cfg.clone()),
                )
            }
            AgentSpec::Ddpg(cfg) => {
                let mut core = DdpgCore::new(dim, racing_bounds(), cfg, net_seed);
                for ep in 0..episodes {
                    let outcome = run_ddpg_episode(
                        &mut core,
                        &mut env,
                        &mut action_rng,
                        &mut episode_rng,
                        &mut sink,
                    )
                    .map_err(|e| wrap_loss_error(e, AgentKind::Ddpg, ep, &opts.out))?;
                    points.push(EpisodeStats::from_outcome(ep, outcome));
                }
                (
                    vec![
                        named_net("actor", &core.actor),
                        named_net("actor_target", &core.actor_target),
                        named_net("critic", &core.critic),
                        named_net("critic_target", &core.critic_target),
                    ],
                    vec![
                        named_optim("actor", &core.optim_actor),
                        named_optim("critic", &core.optim_critic),
                    ],
                    AgentConfigSnapshot::Ddpg(cfg.clone()),
                )
            }
            AgentSpec::Ppo(cfg) => {
                let mut core = PpoCore::new(dim, Action::COUNT, cfg, net_seed);
                let mut collector = Collector::new(episode_rng.clone());
                let mut trace_buf: Vec<TraceRecord> = Vec::new();
                while points.len() < episodes {
                    let remaining = episodes - points.len();
                    core.cfg.entropy_coef =
                        cfg.entropy_at(points.len() as f64 / episodes.max(1) as f64);
                    let (mut rollout, outcomes) = collector.collect(
                        &core,
                        &mut env,
                        cfg.rollout_len,
                        Some(remaining),
                        &mut action_rng,
                        sink.is_some().then_some(&mut trace_buf),
                    )?;
                    for outcome in outcomes {
                        points.push(EpisodeStats::from_outcome(points.len(), outcome));
                    }
                    if let Some(sink) = sink.as_mut() {
                        for rec in trace_buf.drain(..) {
                            sink.push(rec)?;
                        }
                    }
                    if !rollout.is_empty() {
                        rollout.compute_gae(cfg.gamma, cfg.gae_lambda);
                        core.update(&rollout, &mut action_rng).map_err(|e| {
                            wrap_loss_error(e, AgentKind::Ppo, points.len(), &opts.out)
                        })?;
                    }
                }
                // Collector advanced a clone of the episode stream; adopt it.
                episode_rng = collector.into_episode_seed_rng();
                (
                    vec![
                        named_net("policy", &core.policy),
                        named_net("value", &core.value),
                    ],
                    vec![
                        named_optim("policy", &core.optim_policy),
                        named_optim("value", &core.optim_value),
                    ],
                    AgentConfigSnapshot::Ppo(cfg.clone()),
                )
            }
            AgentSpec::Random => {
                for ep in 0..episodes {
                    let outcome =
                        run_random_episode(&mut env, &mut action_rng, &mut episode_rng, &mut sink)?;
                    points.push(EpisodeStats::from_outcome(ep, outcome));
                }
                (Vec::new(), Vec::new(), AgentConfigSnapshot::Random)
            }
        };

    let curve = TrainingCurve { points };
    let checkpoint = AgentCheckpoint {
        version: CHECKPOINT_VERSION,
        agent: agent.kind(),
        episodes_trained: curve.points.len(),
        world: world.clone(),
        reward,
        preset: preset.map(|p| p.as_str().to_string()),
        obs_mode: opts.obs_mode,
        agent_config,
        nets,
        optims,
        action_rng: RngState::capture(&action_rng),
        episode_seed_rng: RngState::capture(&episode_rng),
    };

    if let Some(out) = &opts.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("curve.csv"), curve_csv(&curve))?;
        fs::write(out.join("checkpoint.json"), checkpoint.to_json())?;
    }

    Ok(TrainOutput { curve, checkpoint })
}

fn named_net(name: &str, net: &DenseNet) -> NamedNet {
    NamedNet {
        name: name.to_string(),
        net: net.to_checkpoint(),
    }
}

fn named_optim(name: &str, optim: &Adam) -> NamedOptim {
    NamedOptim {
        name: name.to_string(),
        state: optim.to_state(),
    }
}

fn racing_bounds() -> ActionBounds {
    ActionBounds(vec![(-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)])
}

/// Converts non-finite-loss failures into the harness abort error, writing a
/// diagnostic snapshot into the run directory when one exists.
fn wrap_loss_error(
    err: AgentError,
    agent: AgentKind,
    episode: usize,
    out: &Option<PathBuf>,
) -> HarnessError {
    let detail = match err {
        AgentError::NonFiniteLoss(detail) => detail,
        AgentError::Nn(NnError::NonFiniteGradient) => "non-finite gradient".to_string(),
        other => return other.into(),
    };
    if let Some(out) = out {
        let snapshot = format!(
            "{{\"agent\":\"{agent}\",\"episode\":{episode},\"error\":{}}}\n",
            serde_json::to_string(&detail).expect("string serializes")
        );
        let _ = fs::create_dir_all(out);
        let _ = fs::write(out.join("diagnostic.json"), snapshot);
    }
    HarnessError::NonFiniteLoss {
        agent,
        episode,
        detail,
    }
}

fn run_dqn_episode(
    core: &mut DqnCore,
    env: &mut RacingEnv,
    epsilon: f64,
    action_rng: &mut ChaCha8Rng,
    episode_rng: &mut ChaCha8Rng,
    sink: &mut Option<TraceSink>,
) -> Result<EpisodeOutcome, AgentError> {
    let seed = episode_rng.next_u64();
    let mut obs = env.reset(seed).values;
    let mut counts = [0u64; Action::COUNT];
    loop {
        let a = core.act(&obs, epsilon, action_rng);
        let outcome = env.step_discrete(Action::from_index(a))?;
        counts[a] += 1;
        core.record(Transition {
            state: obs,
            action: a,
            reward: outcome.reward,
            next_state: outcome.observation.values.clone(),
            done: outcome.done,
        });
        if core.ready_to_train() {
            let loss = core.train_step(action_rng)?;
            if !loss.is_finite() {
                return Err(AgentError::NonFiniteLoss("dqn td loss".into()));
            }
        }
        if let Some(sink) = sink.as_mut() {
            sink.push(TraceRecord {
                t: outcome.events.step_index,
                action: EnvAction::Discrete(Action::from_index(a)),
                reward: outcome.reward,
                events: outcome.events,
                cum_reward: env.accumulator().cum_reward,
                cause: outcome.cause,
            })
            .map_err(|e| AgentError::NonFiniteLoss(format!("trace io: {e}")))?;
        }
        obs = outcome.observation.values;
        if outcome.done {
            let acc = env.accumulator();
            return Ok(EpisodeOutcome {
                episode_seed: seed,
                t_srv: acc.step_count,
                r_cum: acc.cum_reward,
                cause: outcome.cause.expect("done implies cause"),
                action_counts: counts,
            });
        }
    }
}

fn run_ddpg_episode(
    core: &mut DdpgCore,
    env: &mut RacingEnv,
    action_rng: &mut ChaCha8Rng,
    episode_rng: &mut ChaCha8Rng,
    sink: &mut Option<TraceSink>,
) -> Result<EpisodeOutcome, AgentError> {
    let seed = episode_rng.next_u64();
    let mut obs = env.reset(seed).values;
    let mut counts = [0u64; Action::COUNT];
    let noise = core.cfg.noise_scale;
    loop {
        let raw = core.act(&obs, noise, action_rng);
        let control = ContinuousControl::new(raw[0], raw[1], raw[2]);
        let outcome = env.step_control(&control)?;
        counts[bin_control(&control).index()] += 1;
        core.record(Transition {
            state: obs,
            action: raw,
            reward: outcome.reward,
            next_state: outcome.observation.values.clone(),
            done: outcome.done,
        });
        if core.ready_to_train() {
            let (critic_loss, actor_objective) = core.train_step(action_rng)?;
            if !critic_loss.is_finite() || !actor_objective.is_finite() {
                return Err(AgentError::NonFiniteLoss("ddpg loss".into()));
            }
        }
        if let Some(sink) = sink.as_mut() {
            sink.push(TraceRecord {
                t: outcome.events.step_index,
                action: EnvAction::Continuous(control),
                reward: outcome.reward,
                events: outcome.events,
                cum_reward: env.accumulator().cum_reward,
                cause: outcome.cause,
            })
            .map_err(|e| AgentError::NonFiniteLoss(format!("trace io: {e}")))?;
        }
        obs = outcome.observation.values;
        if outcome.done {
            let acc = env.accumulator();
            return Ok(EpisodeOutcome {
                episode_seed: seed,
                t_srv: acc.step_count,
                r_cum: acc.cum_reward,
                cause: outcome.cause.expect("done implies cause"),
                action_counts: counts,
            });
        }
    }
}

fn run_random_episode(
    env: &mut RacingEnv,
    action_rng: &mut ChaCha8Rng,
    episode_rng: &mut ChaCha8Rng,
    sink: &mut Option<TraceSink>,
) -> Result<EpisodeOutcome, HarnessError> {
    let seed = episode_rng.next_u64();
    env.reset(seed);
    let mut counts = [0u64; Action::COUNT];
    loop {
        let a = action_rng.gen_range(0..Action::COUNT);
        let outcome = env.step_discrete(Action::from_index(a))?;
        counts[a] += 1;
        if let Some(sink) = sink.as_mut() {
            sink.push(TraceRecord {
                t: outcome.events.step_index,
                action: EnvAction::Discrete(Action::from_index(a)),
                reward: outcome.reward,
                events: outcome.events,
                cum_reward: env.accumulator().cum_reward,
                cause: outcome.cause,
            })?;
        }
        if outcome.done {
            let acc = env.accumulator();
            return Ok(EpisodeOutcome {
                episode_seed: seed,
                t_srv: acc.step_count,
                r_cum: acc.cum_reward,
                cause: outcome.cause.expect("done implies cause"),
                action_counts: counts,
            });
        }
    }
}

/// Frozen evaluation-time policies rebuilt from a checkpoint.
enum EvalPolicy {
    Dqn(DenseNet),
    Ddpg {
        actor: DenseNet,
        bounds: ActionBounds,
    },
    Ppo(DenseNet),
    Random,
}

impl EvalPolicy {
    fn load(ckpt: &AgentCheckpoint) -> Result<EvalPolicy, HarnessError> {
        Ok(match ckpt.agent {
            AgentKind::Dqn => EvalPolicy::Dqn(DenseNet::from_checkpoint(ckpt.net("qnet")?)?),
            AgentKind::Ddpg => EvalPolicy::Ddpg {
                actor: DenseNet::from_checkpoint(ckpt.net("actor")?)?,
                bounds: racing_bounds(),
            },
            AgentKind::Ppo => EvalPolicy::Ppo(DenseNet::from_checkpoint(ckpt.net("policy")?)?),
            AgentKind::Random => EvalPolicy::Random,
        })
    }

    /// Greedy/noise-free action. `episode_rng` is consumed only by the
    /// random baseline.
    fn act(&self, obs: &[f64], episode_rng: &mut ChaCha8Rng) -> Result<EnvAction, HarnessError> {
        Ok(match self {
            EvalPolicy::Dqn(qnet) => {
                let q = qnet.infer1(obs)?;
                EnvAction::Discrete(Action::from_index(crate::nn::argmax(&q)))
            }
            EvalPolicy::Ddpg { actor, bounds } => {
                let raw = actor.infer1(obs)?;
                let mapped = bounds.map(&raw);
                EnvAction::Continuous(ContinuousControl::new(mapped[0], mapped[1], mapped[2]))
            }
            EvalPolicy::Ppo(policy) => {
                let logits = policy.infer1(obs)?;
                EnvAction::Discrete(Action::from_index(crate::nn::argmax(&logits)))
            }
            EvalPolicy::Random => {
                EnvAction::Discrete(Action::from_index(episode_rng.gen_range(0..Action::COUNT)))
            }
        })
    }
}

fn env_action_index(action: &EnvAction) -> usize {
    match action {
        EnvAction::Discrete(a) => a.index(),
        EnvAction::Continuous(c) => bin_control(c).index(),
    }
}

/// Runs the deterministic test protocol: greedy policy, random starts seeded
/// `base_seed + i`, step limit lifted. Returns the summary; writes `eval.csv`
/// and `summary.json` when an output directory is given.
pub fn evaluate(ckpt: &AgentCheckpoint, opts: &EvalOptions) -> Result<EvalSummary, HarnessError> {
    let mut world = ckpt.world.clone();
    if let Some(track_seed) = opts.track_seed_override {
        world.track_seed = track_seed;
    }
    let track = world.build_track()?;
    let mut env = RacingEnv::new(track, ckpt.reward, world.dynamics, ckpt.obs_mode);
    env.set_test_mode(true);
    let policy = EvalPolicy::load(ckpt)?;

    let mut episodes = Vec::with_capacity(opts.n_episodes);
    for i in 0..opts.n_episodes {
        let seed = opts.base_seed.wrapping_add(i as u64);
        let mut obs = env.reset(seed).values;
        // Stream for the random baseline; learned policies ignore it.
        let mut episode_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_CAFE);
        let mut counts = [0u64; Action::COUNT];
        loop {
            let action = policy.act(&obs, &mut episode_rng)?;
            let outcome = match action {
                EnvAction::Discrete(a) => env.step_discrete(a)?,
                EnvAction::Continuous(c) => env.step_control(&c)?,
            };
            counts[env_action_index(&action)] += 1;
            obs = outcome.observation.values;
            if outcome.done {
                let acc = env.accumulator();
                episodes.push(EpisodeStats {
                    episode: i,
                    episode_seed: seed,
                    t_srv: acc.step_count,
                    r_cum: acc.cum_reward,
                    cause: outcome.cause.expect("done implies cause"),
                    action_counts: counts,
                });
                break;
            }
            if env.accumulator().step_count >= MAX_EVAL_STEPS {
                return Err(HarnessError::RunawayEpisode);
            }
        }
    }

    let summary = EvalSummary::from_episodes(ckpt.agent, ckpt.preset.clone(), episodes);
    if let Some(out) = &opts.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("eval.csv"), eval_csv(&summary))?;
        fs::write(
            out.join("summary.json"),
            serde_json::to_string_pretty(&summary).expect("summary serializes"),
        )?;
    }
    Ok(summary)
}

/// curve.csv body: `episode,r_cum,t_srv,cause`, full-precision decimals.
pub fn curve_csv(curve: &TrainingCurve) -> String {
    let mut out = String::from("episode,r_cum,t_srv,cause\n");
    for p in &curve.points {
        writeln!(out, "{},{},{},{}", p.episode, p.r_cum, p.t_srv, p.cause.as_str()).unwrap();
    }
    out
}

/// eval.csv body: `episode,seed,t_srv,r_cum,cause,a0,a1,a2,a3,a4`.
pub fn eval_csv(summary: &EvalSummary) -> String {
    let mut out = String::from("episode,seed,t_srv,r_cum,cause,a0,a1,a2,a3,a4\n");
    for e in &summary.episodes {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            e.episode,
            e.episode_seed,
            e.t_srv,
            e.r_cum,
            e.cause.as_str(),
            e.action_counts[0],
            e.action_counts[1],
            e.action_counts[2],
            e.action_counts[3],
            e.action_counts[4],
        )
        .unwrap();
    }
    out
}

/// One (agent, preset, seed) cell of a comparison run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareCell {
    pub agent: AgentKind,
    pub preset: Preset,
    pub run_seed: u64,
    pub result: Result<CellScores, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellScores {
    pub mean_t_srv: f64,
    pub mean_r_cum: f64,
    pub std_r_cum: f64,
    pub action_histogram: [u64; Action::COUNT],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub agents: Vec<AgentKind>,
    pub presets: Vec<Preset>,
    pub seeds: Vec<u64>,
    pub episodes_per_cell: usize,
    pub eval_episodes: usize,
    pub cells: Vec<CompareCell>,
}

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub episodes: usize,
    pub eval_episodes: usize,
    pub eval_base_seed: u64,
    pub obs_mode: ObsMode,
    pub seeds: Vec<u64>,
    /// Worker threads for independent cells; 1 keeps everything serial.
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            episodes: 500,
            eval_episodes: 100,
            eval_base_seed: 1_000_000,
            obs_mode: ObsMode::Features,
            seeds: vec![0, 1, 2, 3, 4],
            threads: 1,
            out: None,
        }
    }
}

/// Full factorial (agent x preset x seed) train-and-evaluate. Cell failures
/// are recorded in the report and do not stop the remaining cells.
pub fn compare(
    world: &WorldConfig,
    agents: &[AgentSpec],
    presets: &[Preset],
    opts: &CompareOptions,
) -> Result<ComparisonReport, HarnessError> {
    struct CellJob {
        agent: AgentSpec,
        preset: Preset,
        run_seed: u64,
    }

    let mut jobs = Vec::new();
    for agent in agents {
        for &preset in presets {
            for &run_seed in &opts.seeds {
                jobs.push(CellJob {
                    agent: agent.clone(),
                    preset,
                    run_seed,
                });
            }
        }
    }

    let run_cell = |job: &CellJob| -> Result<CellScores, String> {
        let cell_dir = opts.out.as_ref().map(|out| {
            out.join(format!(
                "{}_{}_{}",
                job.agent.kind(),
                job.preset,
                job.run_seed
            ))
        });
        let train_opts = TrainOptions {
            episodes: opts.episodes,
            obs_mode: opts.obs_mode,
            trace: false,
            out: cell_dir.clone(),
        };
        let trained = train(
            world,
            &job.agent,
            job.preset.config(),
            Some(job.preset),
            &train_opts,
            job.run_seed,
        )
        .map_err(|e| e.to_string())?;
        let eval_opts = EvalOptions {
            n_episodes: opts.eval_episodes,
            base_seed: opts.eval_base_seed,
            track_seed_override: None,
            out: cell_dir,
        };
        let summary = evaluate(&trained.checkpoint, &eval_opts).map_err(|e| e.to_string())?;
        Ok(CellScores {
            mean_t_srv: summary.mean_t_srv,
            mean_r_cum: summary.mean_r_cum,
            std_r_cum: summary.std_r_cum,
            action_histogram: summary.action_histogram,
        })
    };

    let results: Vec<Mutex<Option<Result<CellScores, String>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let threads = opts.threads.max(1).min(jobs.len().max(1));
    if threads <= 1 {
        for (job, slot) in jobs.iter().zip(&results) {
            *slot.lock().unwrap() = Some(run_cell(job));
        }
    } else {
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= jobs.len() {
                        break;
                    }
                    let outcome = run_cell(&jobs[i]);
                    *results[i].lock().unwrap() = Some(outcome);
                });
            }
        });
    }

    let cells = jobs
        .iter()
        .zip(results)
        .map(|(job, slot)| CompareCell {
            agent: job.agent.kind(),
            preset: job.preset,
            run_seed: job.run_seed,
            result: slot.into_inner().unwrap().expect("cell ran"),
        })
        .collect();

    let report = ComparisonReport {
        agents: agents.iter().map(|a| a.kind()).collect(),
        presets: presets.to_vec(),
        seeds: opts.seeds.clone(),
        episodes_per_cell: opts.episodes,
        eval_episodes: opts.eval_episodes,
        cells,
    };

    if let Some(out) = &opts.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("report.md"), report.to_markdown())?;
        fs::write(
            out.join("report.json"),
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
    }
    Ok(report)
}

impl ComparisonReport {
    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(|c| c.result.is_err())
    }

    fn cell(&self, agent: AgentKind, preset: Preset, seed: u64) -> Option<&CompareCell> {
        self.cells
            .iter()
            .find(|c| c.agent == agent && c.preset == preset && c.run_seed == seed)
    }

    /// Mean scores over the seeds whose cells succeeded.
    pub fn aggregate(&self, agent: AgentKind, preset: Preset) -> Option<CellScores> {
        let scores: Vec<&CellScores> = self
            .seeds
            .iter()
            .filter_map(|&s| self.cell(agent, preset, s))
            .filter_map(|c| c.result.as_ref().ok())
            .collect();
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        let mut histogram = [0u64; Action::COUNT];
        for s in &scores {
            for (h, c) in histogram.iter_mut().zip(s.action_histogram) {
                *h += c;
            }
        }
        Some(CellScores {
            mean_t_srv: scores.iter().map(|s| s.mean_t_srv).sum::<f64>() / n,
            mean_r_cum: scores.iter().map(|s| s.mean_r_cum).sum::<f64>() / n,
            std_r_cum: scores.iter().map(|s| s.std_r_cum).sum::<f64>() / n,
            action_histogram: histogram,
        })
    }

    /// Per-seed wins of reshaped over default for one agent and metric.
    /// Returns (wins, decided_seeds, per-seed outcomes).
    pub fn reshaped_wins<F>(&self, agent: AgentKind, better: F) -> (usize, usize, Vec<(u64, Option<bool>)>)
    where
        F: Fn(&CellScores, &CellScores) -> bool,
    {
        let mut wins = 0;
        let mut decided = 0;
        let mut detail = Vec::new();
        for &seed in &self.seeds {
            let d = self
                .cell(agent, Preset::Default, seed)
                .and_then(|c| c.result.as_ref().ok());
            let r = self
                .cell(agent, Preset::Reshaped, seed)
                .and_then(|c| c.result.as_ref().ok());
            match (d, r) {
                (Some(d), Some(r)) => {
                    decided += 1;
                    let won = better(r, d);
                    wins += usize::from(won);
                    detail.push((seed, Some(won)));
                }
                _ => detail.push((seed, None)),
            }
        }
        (wins, decided, detail)
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        md.push_str("# Comparison report\n\n");
        writeln!(
            md,
            "{} training episodes per cell, {} evaluation episodes, seeds {:?}.",
            self.episodes_per_cell, self.eval_episodes, self.seeds
        )
        .unwrap();
        md.push_str("std_r_cum is the population standard deviation (divide by n).\n\n");

        md.push_str("## Reward presets\n\n");
        md.push_str("| preset | r_exp | r_obs | r_out | r_alive | n_eps | t_out_s | r_up | r_down |\n");
        md.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for preset in Preset::ALL {
            let c = preset.config();
            writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                preset, c.r_exp, c.r_obs, c.r_out, c.r_alive, c.n_eps, c.t_out_s, c.r_up, c.r_down
            )
            .unwrap();
        }

        md.push_str("\n## Test scores (mean over seeds)\n\n");
        md.push_str("| score | preset |");
        for agent in &self.agents {
            write!(md, " {agent} |").unwrap();
        }
        md.push('\n');
        md.push_str("|---|---|");
        md.push_str(&"---|".repeat(self.agents.len()));
        md.push('\n');
        for (label, pick) in [
            ("mean_t_srv", 0usize),
            ("mean_r_cum", 1),
            ("std_r_cum", 2),
        ] {
            for &preset in &self.presets {
                write!(md, "| {label} | {preset} |").unwrap();
                for &agent in &self.agents {
                    match self.aggregate(agent, preset) {
                        Some(s) => {
                            let v = match pick {
                                0 => s.mean_t_srv,
                                1 => s.mean_r_cum,
                                _ => s.std_r_cum,
                            };
                            write!(md, " {v} |").unwrap();
                        }
                        None => {
                            write!(md, " — |").unwrap();
                        }
                    }
                }
                md.push('\n');
            }
        }

        if self.presets.contains(&Preset::Default) && self.presets.contains(&Preset::Reshaped) {
            md.push_str("\n## Per-seed wins, reshaped vs default\n\n");
            md.push_str("| agent | metric | wins | per seed |\n|---|---|---|---|\n");
            for &agent in &self.agents {
                let metrics: [(&str, fn(&CellScores, &CellScores) -> bool); 3] = [
                    ("mean_r_cum higher", |r, d| r.mean_r_cum > d.mean_r_cum),
                    ("mean_t_srv higher or equal", |r, d| {
                        r.mean_t_srv >= d.mean_t_srv
                    }),
                    ("std_r_cum lower", |r, d| r.std_r_cum < d.std_r_cum),
                ];
                for (name, better) in metrics {
                    let (wins, decided, detail) = self.reshaped_wins(agent, better);
                    let marks: Vec<String> = detail
                        .iter()
                        .map(|(seed, won)| match won {
                            Some(true) => format!("{seed}:W"),
                            Some(false) => format!("{seed}:L"),
                            None => format!("{seed}:—"),
                        })
                        .collect();
                    writeln!(
                        md,
                        "| {agent} | {name} | {wins}/{decided} | {} |",
                        marks.join(" ")
                    )
                    .unwrap();
                }
            }
        }

        md.push_str("\n## Action histograms (a0..a4 summed over seeds)\n\n");
        md.push_str("| agent | preset | no_action | steer_left | steer_right | accelerate | brake |\n");
        md.push_str("|---|---|---|---|---|---|---|\n");
        for &agent in &self.agents {
            for &preset in &self.presets {
                if let Some(s) = self.aggregate(agent, preset) {
                    writeln!(
                        md,
                        "| {agent} | {preset} | {} | {} | {} | {} | {} |",
                        s.action_histogram[0],
                        s.action_histogram[1],
                        s.action_histogram[2],
                        s.action_histogram[3],
                        s.action_histogram[4]
                    )
                    .unwrap();
                }
            }
        }

        md.push_str("\n## Cells\n\n");
        md.push_str("| agent | preset | run_seed | mean_t_srv | mean_r_cum | std_r_cum | status |\n");
        md.push_str("|---|---|---|---|---|---|---|\n");
        for cell in &self.cells {
            match &cell.result {
                Ok(s) => writeln!(
                    md,
                    "| {} | {} | {} | {} | {} | {} | ok |",
                    cell.agent, cell.preset, cell.run_seed, s.mean_t_srv, s.mean_r_cum, s.std_r_cum
                )
                .unwrap(),
                Err(e) => writeln!(
                    md,
                    "| {} | {} | {} | — | — | — | FAILED: {} |",
                    cell.agent, cell.preset, cell.run_seed, e
                )
                .unwrap(),
            }
        }
        md
    }
}
