//! The physical substrate under the MDP: procedural track, obstacles,
//! visited-tile bookkeeping and car kinematics.

pub mod dynamics;
pub mod geometry;
pub mod track;
pub mod visited;

pub use dynamics::{step_dynamics, CarState, DynamicsParams};
pub use geometry::{segments_intersect, wrap_angle, Vec2};
pub use track::{
    generate_track, place_obstacles, Obstacle, TileLocator, Track, TrackGenParams, TrackTile,
    SPAWN_PROTECTED_TILES,
};
pub use visited::VisitedSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Everything needed to rebuild a world deterministically: track generation
/// inputs, obstacle placement inputs and vehicle dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub track_seed: u64,
    pub gen: TrackGenParams,
    pub obstacle_count: usize,
    pub obstacle_seed: u64,
    pub obstacle_radius: f64,
    pub dynamics: DynamicsParams,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            track_seed: 0,
            gen: TrackGenParams::default(),
            obstacle_count: 6,
            obstacle_seed: 1,
            obstacle_radius: 1.0,
            dynamics: DynamicsParams::default(),
        }
    }
}

impl WorldConfig {
    /// Generates the track and places its obstacles.
    pub fn build_track(&self) -> Result<Track, WorldError> {
        let track = generate_track(self.track_seed, &self.gen)?;
        place_obstacles(
            &track,
            self.obstacle_seed,
            self.obstacle_count,
            self.obstacle_radius,
        )
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("track generation failed for seed {seed} after {attempts} attempts: {reason}")]
    GenerationFailed {
        seed: u64,
        attempts: u32,
        reason: String,
    },
    #[error("invalid world parameters: {0}")]
    InvalidParams(String),
    #[error("{count} obstacles do not fit on a {tiles}-tile track")]
    TooManyObstacles { count: usize, tiles: usize },
    #[error("malformed track file: {0}")]
    BadTrackFile(String),
}

/// On-disk representation of a track:
/// `{seed, tile_length, tiles: [{index, cx, cy, heading, half_width}], obstacles: [{tile, offset, radius}]}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrackFile {
    pub seed: u64,
    pub tile_length: f64,
    pub tiles: Vec<TrackFileTile>,
    pub obstacles: Vec<TrackFileObstacle>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrackFileTile {
    pub index: usize,
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub half_width: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrackFileObstacle {
    pub tile: usize,
    pub offset: f64,
    pub radius: f64,
}

impl From<&Track> for TrackFile {
    fn from(track: &Track) -> Self {
        TrackFile {
            seed: track.seed,
            tile_length: track.tile_length,
            tiles: track
                .tiles
                .iter()
                .map(|t| TrackFileTile {
                    index: t.index,
                    cx: t.center.x,
                    cy: t.center.y,
                    heading: t.heading,
                    half_width: t.half_width,
                })
                .collect(),
            obstacles: track
                .obstacles
                .iter()
                .map(|o| TrackFileObstacle {
                    tile: o.tile_index,
                    offset: o.offset,
                    radius: o.radius,
                })
                .collect(),
        }
    }
}

impl TryFrom<TrackFile> for Track {
    type Error = WorldError;

    fn try_from(file: TrackFile) -> Result<Self, Self::Error> {
        if file.tiles.is_empty() {
            return Err(WorldError::BadTrackFile("no tiles".into()));
        }
        let mut tiles = Vec::with_capacity(file.tiles.len());
        for (i, t) in file.tiles.iter().enumerate() {
            if t.index != i {
                return Err(WorldError::BadTrackFile(format!(
                    "tile {} has index {}",
                    i, t.index
                )));
            }
            tiles.push(TrackTile {
                index: t.index,
                center: Vec2::new(t.cx, t.cy),
                heading: t.heading,
                half_width: t.half_width,
            });
        }
        let mut obstacles = Vec::with_capacity(file.obstacles.len());
        for o in &file.obstacles {
            if o.tile >= tiles.len() {
                return Err(WorldError::BadTrackFile(format!(
                    "obstacle tile {} out of range",
                    o.tile
                )));
            }
            obstacles.push(Obstacle {
                tile_index: o.tile,
                offset: o.offset,
                radius: o.radius,
            });
        }
        Ok(Track {
            tiles,
            obstacles,
            seed: file.seed,
            tile_length: file.tile_length,
        })
    }
}

impl Track {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&TrackFile::from(self)).expect("track serializes")
    }

    pub fn from_json(json: &str) -> Result<Track, WorldError> {
        let file: TrackFile =
            serde_json::from_str(json).map_err(|e| WorldError::BadTrackFile(e.to_string()))?;
        Track::try_from(file)
    }
}
