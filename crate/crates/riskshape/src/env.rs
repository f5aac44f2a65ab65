//! The MDP facade: reset/step/observe over the racing world, with event
//! detection wired into the reward and termination rules.

use crate::reward::{
    check_termination, compute_reward, EpisodeAccumulator, RewardConfig, TerminationCause,
};
use crate::world::{
    step_dynamics, CarState, DynamicsParams, TileLocator, Track, Vec2, VisitedSet,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation tick, seconds (50 Hz stepping).
pub const DT: f64 = 0.02;

/// Native raster resolution; smaller rasters are block averages of this grid.
pub const RASTER_BASE: usize = 96;

/// Height (and width) of the square raster view, meters.
pub const RASTER_VIEW_M: f64 = 48.0;

/// Centerline distances (meters) probed for the turn-lookahead features.
pub const LOOKAHEAD_METERS: [f64; 5] = [2.0, 5.0, 10.0, 20.0, 35.0];

/// Length of the feature-vector observation.
pub const FEATURE_LEN: usize = 6 + LOOKAHEAD_METERS.len();

/// Distance at which the obstacle-proximity feature saturates, meters.
const OBSTACLE_FEATURE_RANGE: f64 = 40.0;

const GRAY_GRASS: f64 = 0.15;
const GRAY_TRACK: f64 = 0.5;
const GRAY_OBSTACLE: f64 = 0.9;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step() called on a terminated episode (cause: {0})")]
    EpisodeTerminated(TerminationCause),
    #[error("step() called before reset()")]
    NotReset,
    #[error("raster size {0} must be a divisor of {RASTER_BASE}")]
    BadRasterSize(usize),
}

/// The five discrete driving actions, indexed 0..=4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    NoAction,
    SteerLeft,
    SteerRight,
    Accelerate,
    Brake,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [
        Action::NoAction,
        Action::SteerLeft,
        Action::SteerRight,
        Action::Accelerate,
        Action::Brake,
    ];

    pub fn index(self) -> usize {
        match self {
            Action::NoAction => 0,
            Action::SteerLeft => 1,
            Action::SteerRight => 2,
            Action::Accelerate => 3,
            Action::Brake => 4,
        }
    }

    pub fn from_index(index: usize) -> Action {
        Action::ALL[index]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::NoAction => "no_action",
            Action::SteerLeft => "steer_left",
            Action::SteerRight => "steer_right",
            Action::Accelerate => "accelerate",
            Action::Brake => "brake",
        }
    }
}

/// Continuous control command: steer in [-1, 1], accel and brake in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousControl {
    pub steer: f64,
    pub accel: f64,
    pub brake: f64,
}

impl ContinuousControl {
    /// Builds a control with all components clamped into range.
    pub fn new(steer: f64, accel: f64, brake: f64) -> Self {
        ContinuousControl {
            steer: steer.clamp(-1.0, 1.0),
            accel: accel.clamp(0.0, 1.0),
            brake: brake.clamp(0.0, 1.0),
        }
    }
}

/// Canonical continuous control for each discrete action.
pub fn discrete_to_control(action: Action) -> ContinuousControl {
    match action {
        Action::NoAction => ContinuousControl::new(0.0, 0.0, 0.0),
        Action::SteerLeft => ContinuousControl::new(-1.0, 0.0, 0.0),
        Action::SteerRight => ContinuousControl::new(1.0, 0.0, 0.0),
        Action::Accelerate => ContinuousControl::new(0.0, 1.0, 0.0),
        Action::Brake => ContinuousControl::new(0.0, 0.0, 0.8),
    }
}

/// Either kind of action an agent can feed into the environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvAction {
    Discrete(Action),
    Continuous(ContinuousControl),
}

/// What the agent sees each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ObsMode {
    /// Fixed-length feature vector; see [`RacingEnv::feature_vector`].
    Features,
    /// Square grayscale bird's-eye raster, car at bottom center.
    Raster { size: usize },
}

/// Observation payload; raster pixels are row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: Vec<f64>,
}

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-step event flags feeding the reward gates and termination checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEvents {
    pub new_tile: bool,
    pub collided: bool,
    pub off_track: bool,
    /// 1-based index of this step within the episode.
    pub step_index: usize,
    pub consecutive_off_track_steps: usize,
}

/// One (s, a, r, s', done) sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition<A> {
    pub state: Vec<f64>,
    pub action: A,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub events: StepEvents,
    pub cause: Option<TerminationCause>,
}

/// One line of the optional per-episode trace log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub action: EnvAction,
    pub reward: f64,
    pub events: StepEvents,
    pub cum_reward: f64,
    pub cause: Option<TerminationCause>,
}

/// The racing MDP. One instance runs one episode at a time; independent
/// instances are safe to run on separate threads.
#[derive(Debug, Clone)]
pub struct RacingEnv {
    track: Track,
    locator: TileLocator,
    obstacle_centers: Vec<Vec2>,
    dynamics: DynamicsParams,
    reward_cfg: RewardConfig,
    obs_mode: ObsMode,
    test_mode: bool,
    car: CarState,
    visited: VisitedSet,
    acc: EpisodeAccumulator,
    terminated: Option<TerminationCause>,
    started: bool,
}

impl RacingEnv {
    pub fn new(
        track: Track,
        reward_cfg: RewardConfig,
        dynamics: DynamicsParams,
        obs_mode: ObsMode,
    ) -> Self {
        let locator = TileLocator::new(&track);
        let obstacle_centers = track
            .obstacles
            .iter()
            .map(|o| track.obstacle_position(o))
            .collect();
        let visited = VisitedSet::new(track.num_tiles());
        RacingEnv {
            track,
            locator,
            obstacle_centers,
            dynamics,
            reward_cfg,
            obs_mode,
            test_mode: false,
            car: CarState::at(Vec2::ZERO, 0.0),
            visited,
            acc: EpisodeAccumulator::default(),
            terminated: None,
            started: false,
        }
    }

    /// In test mode the step limit is lifted; all other termination
    /// conditions stay active.
    pub fn set_test_mode(&mut self, test_mode: bool) {
        self.test_mode = test_mode;
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn car(&self) -> &CarState {
        &self.car
    }

    pub fn accumulator(&self) -> &EpisodeAccumulator {
        &self.acc
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward_cfg
    }

    pub fn obs_mode(&self) -> ObsMode {
        self.obs_mode
    }

    pub fn dynamics(&self) -> &DynamicsParams {
        &self.dynamics
    }

    pub fn is_done(&self) -> bool {
        self.terminated.is_some()
    }

    pub fn needs_reset(&self) -> bool {
        !self.started || self.terminated.is_some()
    }

    pub fn locate_car(&self) -> Option<(usize, f64)> {
        self.locator.locate(self.car.position)
    }

    /// Places the car at the center of a uniformly sampled tile, aligned with
    /// the tile heading, at rest. Deterministic per `episode_seed`.
    ///
    /// The spawn tile counts as already visited: the car did not drive onto
    /// it, so it pays no exploration bonus.
    pub fn reset(&mut self, episode_seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let tile_idx = rng.gen_range(0..self.track.num_tiles());
        let tile = &self.track.tiles[tile_idx];
        self.car = CarState::at(tile.center, tile.heading);
        self.visited.clear();
        self.visited.mark(tile_idx);
        self.acc = EpisodeAccumulator::default();
        self.terminated = None;
        self.started = true;
        self.observe(self.obs_mode)
    }

    pub fn step_discrete(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        self.step_control(&discrete_to_control(action))
    }

    /// Advances the simulation one tick: physics, event detection, reward,
    /// termination. Stepping a terminated episode is a contract violation.
    pub fn step_control(&mut self, control: &ContinuousControl) -> Result<StepOutcome, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if let Some(cause) = self.terminated {
            return Err(EnvError::EpisodeTerminated(cause));
        }

        let on_grass = self.locator.locate(self.car.position).is_none();
        self.car = step_dynamics(&self.car, control, on_grass, &self.dynamics, DT);

        let located = self.locator.locate(self.car.position);
        let off_track = located.is_none();
        // The exploration bonus only exists on the track: grass has no tiles.
        let new_tile = match located {
            Some((idx, _)) => self.visited.mark(idx),
            None => false,
        };
        let collided = self.collided();

        self.acc.step_count += 1;
        self.acc.consecutive_off_track_steps = if off_track {
            self.acc.consecutive_off_track_steps + 1
        } else {
            0
        };
        let events = StepEvents {
            new_tile,
            collided,
            off_track,
            step_index: self.acc.step_count,
            consecutive_off_track_steps: self.acc.consecutive_off_track_steps,
        };

        let reward = compute_reward(&events, &self.reward_cfg);
        self.acc.cum_reward += reward;

        let cause = check_termination(&self.acc, &events, &self.reward_cfg, DT, self.test_mode);
        self.terminated = cause;

        Ok(StepOutcome {
            observation: self.observe(self.obs_mode),
            reward,
            done: cause.is_some(),
            events,
            cause,
        })
    }

    fn collided(&self) -> bool {
        let r_car = self.dynamics.car_radius;
        self.track
            .obstacles
            .iter()
            .zip(&self.obstacle_centers)
            .any(|(o, c)| self.car.position.dist_sq(*c) < (o.radius + r_car).powi(2))
    }

    /// Renders the requested observation. Pure function of world state.
    pub fn observe(&self, mode: ObsMode) -> Observation {
        match mode {
            ObsMode::Features => Observation {
                values: self.feature_vector(),
            },
            ObsMode::Raster { size } => Observation {
                values: self.render_raster(size).expect("raster size validated"),
            },
        }
    }

    /// Feature observation, length [`FEATURE_LEN`]:
    ///
    /// 0. speed / v_max
    /// 1. lateral offset / half width (signed, left positive), clamped to ±4
    /// 2. heading error vs. the reference tile, wrapped, / pi
    /// 3..=7. cumulative centerline turn from here to each lookahead
    ///        distance, wrapped radians
    /// 8. distance to the nearest obstacle, saturating at 40 m, in [0, 1]
    /// 9. bearing to that obstacle / pi (0 when no obstacles)
    /// 10. on-track flag
    ///
    /// Off the track, the nearest tile by center distance serves as the
    /// reference so the car can still find its way back.
    pub fn feature_vector(&self) -> Vec<f64> {
        let (tile_idx, lateral) = match self.locate_car() {
            Some(hit) => hit,
            None => self.nearest_tile_by_center(),
        };
        let on_track = self.locate_car().is_some();
        let n = self.track.num_tiles();
        let tile = &self.track.tiles[tile_idx];

        let mut f = Vec::with_capacity(FEATURE_LEN);
        f.push(self.car.speed / self.dynamics.v_max);
        f.push((lateral / tile.half_width).clamp(-4.0, 4.0));
        f.push(crate::world::wrap_angle(self.car.heading - tile.heading) / std::f64::consts::PI);
        for meters in LOOKAHEAD_METERS {
            let k = ((meters / self.track.tile_length).round() as usize).max(1);
            let ahead = self.track.tiles[(tile_idx + k) % n].heading;
            f.push(crate::world::wrap_angle(ahead - tile.heading));
        }
        let (obst_dist, obst_bearing) = self.nearest_obstacle();
        f.push(obst_dist);
        f.push(obst_bearing);
        f.push(if on_track { 1.0 } else { 0.0 });
        debug_assert_eq!(f.len(), FEATURE_LEN);
        f
    }

    fn nearest_tile_by_center(&self) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for t in &self.track.tiles {
            let d = self.car.position.dist_sq(t.center);
            if d < best.1 {
                best = (t.index, d);
            }
        }
        let tile = &self.track.tiles[best.0];
        let delta = self.car.position - tile.center;
        let lateral = delta.dot(Vec2::from_angle(tile.heading).perp());
        (best.0, lateral)
    }

    fn nearest_obstacle(&self) -> (f64, f64) {
        let mut best: Option<(f64, Vec2)> = None;
        for c in &self.obstacle_centers {
            let d = self.car.position.dist(*c);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, *c));
            }
        }
        match best {
            Some((d, c)) => {
                let bearing = crate::world::wrap_angle(
                    (c - self.car.position).angle() - self.car.heading,
                ) / std::f64::consts::PI;
                ((d.min(OBSTACLE_FEATURE_RANGE)) / OBSTACLE_FEATURE_RANGE, bearing)
            }
            None => (1.0, 0.0),
        }
    }

    /// Grayscale bird's-eye view. The scene is point-sampled on the fixed
    /// 96x96 base grid and block-averaged down to `size`, so coarser rasters
    /// are exact block averages of finer ones.
    pub fn render_raster(&self, size: usize) -> Result<Vec<f64>, EnvError> {
        if size == 0 || RASTER_BASE % size != 0 {
            return Err(EnvError::BadRasterSize(size));
        }
        let mpp = RASTER_VIEW_M / RASTER_BASE as f64;
        let fwd = Vec2::from_angle(self.car.heading);
        let left = fwd.perp();

        let mut base = vec![0.0f64; RASTER_BASE * RASTER_BASE];
        for r in 0..RASTER_BASE {
            let ahead = (RASTER_BASE - r) as f64 * mpp - 0.5 * mpp;
            for c in 0..RASTER_BASE {
                let lat = (0.5 * RASTER_BASE as f64 - c as f64) * mpp - 0.5 * mpp;
                let p = self.car.position + fwd * ahead + left * lat;
                base[r * RASTER_BASE + c] = self.sample_gray(p);
            }
        }
        if size == RASTER_BASE {
            return Ok(base);
        }

        let k = RASTER_BASE / size;
        let scale = 1.0 / (k * k) as f64;
        let mut out = vec![0.0f64; size * size];
        for r in 0..size {
            for c in 0..size {
                let mut sum = 0.0;
                for dr in 0..k {
                    for dc in 0..k {
                        sum += base[(r * k + dr) * RASTER_BASE + (c * k + dc)];
                    }
                }
                out[r * size + c] = sum * scale;
            }
        }
        Ok(out)
    }

    fn sample_gray(&self, p: Vec2) -> f64 {
        for (o, c) in self.track.obstacles.iter().zip(&self.obstacle_centers) {
            if p.dist_sq(*c) < o.radius * o.radius {
                return GRAY_OBSTACLE;
            }
        }
        if self.locator.locate(p).is_some() {
            GRAY_TRACK
        } else {
            GRAY_GRASS
        }
    }
}
