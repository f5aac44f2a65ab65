//! Procedural closed-loop track generation, obstacle placement and tile lookup.
//!
//! Tracks are built by jittering checkpoints on a circle, threading a closed
//! centripetal Catmull-Rom spline through them, and resampling the spline into
//! equal-length tiles. Candidate loops that self-intersect or pass too close
//! to themselves are rejected and regenerated from a derived seed.

use super::geometry::{segment_dist, segments_intersect, wrap_angle, Vec2};
use super::WorldError;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Obstacles are never placed on the first tiles of the loop so that a spawn
/// on tile 0 cannot face an immediate collision.
pub const SPAWN_PROTECTED_TILES: usize = 10;

/// One fixed-length segment of the track centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackTile {
    pub index: usize,
    pub center: Vec2,
    /// Direction of travel at this tile, radians.
    pub heading: f64,
    pub half_width: f64,
}

/// A disc-shaped obstacle sitting on the track surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub tile_index: usize,
    /// Lateral offset from the tile center, meters, left positive.
    pub offset: f64,
    pub radius: f64,
}

/// A closed racing loop plus the obstacles placed on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub tiles: Vec<TrackTile>,
    pub obstacles: Vec<Obstacle>,
    pub seed: u64,
    pub tile_length: f64,
}

impl Track {
    pub fn num_tiles(&self) -> usize {
        self.tiles.len()
    }

    /// World position of an obstacle's center.
    pub fn obstacle_position(&self, obstacle: &Obstacle) -> Vec2 {
        let tile = &self.tiles[obstacle.tile_index];
        tile.center + Vec2::from_angle(tile.heading).perp() * obstacle.offset
    }
}

/// Knobs for [`generate_track`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackGenParams {
    /// Number of checkpoints sampled on the base circle.
    pub num_checkpoints: usize,
    /// Base circle radius, meters.
    pub base_radius: f64,
    /// Radial jitter as a fraction of the base radius.
    pub radius_jitter: f64,
    /// Angular jitter as a fraction of the checkpoint slot width.
    pub angle_jitter: f64,
    /// Arc length of one tile, meters.
    pub tile_length: f64,
    /// Lateral half width of the drivable band, meters.
    pub half_width: f64,
    pub min_tiles: usize,
    pub max_tiles: usize,
    /// Regeneration attempts before giving up.
    pub max_attempts: u32,
}

impl Default for TrackGenParams {
    fn default() -> Self {
        TrackGenParams {
            num_checkpoints: 12,
            base_radius: 120.0,
            radius_jitter: 0.35,
            angle_jitter: 0.35,
            tile_length: 0.3,
            half_width: 6.0,
            min_tiles: 100,
            max_tiles: 8000,
            max_attempts: 16,
        }
    }
}

impl TrackGenParams {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.num_checkpoints < 4 {
            return Err(WorldError::InvalidParams(
                "num_checkpoints must be at least 4".into(),
            ));
        }
        if !(self.base_radius > 0.0) {
            return Err(WorldError::InvalidParams("base_radius must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.radius_jitter) || !(0.0..1.0).contains(&self.angle_jitter) {
            return Err(WorldError::InvalidParams(
                "jitter fractions must lie in [0, 1)".into(),
            ));
        }
        if !(self.tile_length > 0.0) {
            return Err(WorldError::InvalidParams("tile_length must be > 0".into()));
        }
        if !(self.half_width > 0.0) {
            return Err(WorldError::InvalidParams("half_width must be > 0".into()));
        }
        if self.min_tiles >= self.max_tiles {
            return Err(WorldError::InvalidParams(
                "min_tiles must be < max_tiles".into(),
            ));
        }
        Ok(())
    }
}

/// Centripetal Catmull-Rom interpolation between `p1` and `p2`, `u` in [0, 1].
fn catmull_rom(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2, u: f64) -> Vec2 {
    const ALPHA: f64 = 0.5;
    let knot = |a: Vec2, b: Vec2, t: f64| t + a.dist(b).max(1e-9).powf(ALPHA);
    let t0 = 0.0;
    let t1 = knot(p0, p1, t0);
    let t2 = knot(p1, p2, t1);
    let t3 = knot(p2, p3, t2);
    let t = t1 + u * (t2 - t1);

    let lerp = |a: Vec2, b: Vec2, ta: f64, tb: f64| a * ((tb - t) / (tb - ta)) + b * ((t - ta) / (tb - ta));
    let a1 = lerp(p0, p1, t0, t1);
    let a2 = lerp(p1, p2, t1, t2);
    let a3 = lerp(p2, p3, t2, t3);
    let b1 = lerp(a1, a2, t0, t2);
    let b2 = lerp(a2, a3, t1, t3);
    lerp(b1, b2, t1, t2)
}

fn rng_for_attempt(seed: u64, attempt: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Generates a closed, non-self-intersecting loop. Deterministic for a fixed
/// `(seed, params)` pair.
pub fn generate_track(seed: u64, params: &TrackGenParams) -> Result<Track, WorldError> {
    params.validate()?;
    let mut last_reason = "no attempt made".to_string();
    for attempt in 0..params.max_attempts {
        match try_generate(seed, attempt, params) {
            Ok(tiles) => {
                return Ok(Track {
                    tiles,
                    obstacles: Vec::new(),
                    seed,
                    tile_length: params.tile_length,
                })
            }
            Err(reason) => last_reason = reason,
        }
    }
    Err(WorldError::GenerationFailed {
        seed,
        attempts: params.max_attempts,
        reason: last_reason,
    })
}

fn try_generate(seed: u64, attempt: u32, params: &TrackGenParams) -> Result<Vec<TrackTile>, String> {
    let mut rng = rng_for_attempt(seed, attempt);
    let k = params.num_checkpoints;

    let mut checkpoints = Vec::with_capacity(k);
    for i in 0..k {
        let slot = TAU / k as f64;
        let jitter: f64 = rng.gen_range(-params.angle_jitter..=params.angle_jitter);
        let theta = slot * (i as f64 + 0.5 * jitter);
        let rj: f64 = rng.gen_range(-params.radius_jitter..=params.radius_jitter);
        let radius = params.base_radius * (1.0 + rj);
        checkpoints.push(Vec2::from_angle(theta) * radius);
    }

    // Dense closed polyline along the spline; spacing well below one tile so
    // arc-length resampling is accurate.
    let mut dense: Vec<Vec2> = Vec::new();
    for i in 0..k {
        let p0 = checkpoints[(i + k - 1) % k];
        let p1 = checkpoints[i];
        let p2 = checkpoints[(i + 1) % k];
        let p3 = checkpoints[(i + 2) % k];
        let samples = ((p1.dist(p2) / (params.tile_length / 3.0)).ceil() as usize).clamp(8, 4000);
        for s in 0..samples {
            dense.push(catmull_rom(p0, p1, p2, p3, s as f64 / samples as f64));
        }
    }

    // Cumulative arc length, closing the loop back to dense[0].
    let m = dense.len();
    let mut cum = Vec::with_capacity(m + 1);
    cum.push(0.0);
    for i in 0..m {
        let d = dense[i].dist(dense[(i + 1) % m]);
        cum.push(cum[i] + d);
    }
    let total = cum[m];
    if !(total.is_finite() && total > 0.0) {
        return Err("degenerate spline length".into());
    }

    let n = (total / params.tile_length).round() as usize;
    if n < params.min_tiles || n > params.max_tiles {
        return Err(format!(
            "tile count {} outside [{}, {}]",
            n, params.min_tiles, params.max_tiles
        ));
    }

    // Resample at equal arc-length steps.
    let step = total / n as f64;
    let mut centers = Vec::with_capacity(n);
    let mut seg = 0usize;
    for j in 0..n {
        let target = j as f64 * step;
        while cum[seg + 1] < target {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let t = if span > 0.0 { (target - cum[seg]) / span } else { 0.0 };
        let a = dense[seg];
        let b = dense[(seg + 1) % m];
        centers.push(a + (b - a) * t);
    }

    if let Err(reason) = check_layout(&centers, params) {
        return Err(reason);
    }

    let tiles = (0..n)
        .map(|j| {
            let dir = centers[(j + 1) % n] - centers[j];
            TrackTile {
                index: j,
                center: centers[j],
                heading: wrap_angle(dir.angle()),
                half_width: params.half_width,
            }
        })
        .collect();
    Ok(tiles)
}

/// Rejects loops whose centerline crosses itself or whose distant sections
/// come close enough for the lateral bands to become ambiguous.
fn check_layout(centers: &[Vec2], params: &TrackGenParams) -> Result<(), String> {
    let n = centers.len();
    let clearance = 3.0 * params.half_width;
    // Along-track neighbors are naturally close; exempt a window around each
    // segment sized so that only genuine near-passes are flagged.
    let window = ((4.0 * params.half_width) / params.tile_length).ceil() as usize;

    for i in 0..n {
        let a1 = centers[i];
        let a2 = centers[(i + 1) % n];
        for j in (i + 1)..n {
            let ring_gap = (j - i).min(n - (j - i));
            if ring_gap <= 1 {
                continue;
            }
            let b1 = centers[j];
            let b2 = centers[(j + 1) % n];
            if segments_intersect(a1, a2, b1, b2) {
                return Err(format!("self-intersection between segments {i} and {j}"));
            }
            if ring_gap > window && segment_dist(a1, a2, b1, b2) < clearance {
                return Err(format!("near-pass between segments {i} and {j}"));
            }
        }
    }
    Ok(())
}

/// Places `count` disc obstacles on distinct tiles, skipping the spawn
/// protection window at the start of the loop. Deterministic per seed.
pub fn place_obstacles(
    track: &Track,
    seed: u64,
    count: usize,
    radius: f64,
) -> Result<Track, WorldError> {
    let n = track.num_tiles();
    if count > n / 10 {
        return Err(WorldError::TooManyObstacles { count, tiles: n });
    }
    if count > 0 {
        if !(radius > 0.0) {
            return Err(WorldError::InvalidParams("obstacle radius must be > 0".into()));
        }
        let half_width = track.tiles[0].half_width;
        if radius >= half_width {
            return Err(WorldError::InvalidParams(format!(
                "obstacle radius {radius} does not fit inside half width {half_width}"
            )));
        }
    }

    let mut out = track.clone();
    out.obstacles.clear();
    if count == 0 {
        return Ok(out);
    }

    let eligible = n - SPAWN_PROTECTED_TILES;
    if count > eligible {
        return Err(WorldError::TooManyObstacles { count, tiles: n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, eligible, count).into_vec();
    picks.sort_unstable();
    for pick in picks {
        let tile_index = pick + SPAWN_PROTECTED_TILES;
        let span = track.tiles[tile_index].half_width - radius;
        let offset: f64 = rng.gen_range(-span..=span);
        out.obstacles.push(Obstacle {
            tile_index,
            offset,
            radius,
        });
    }
    Ok(out)
}

/// Spatial index answering "which tile band contains this point".
///
/// Tiles are bucketed into a uniform grid by their band bounding boxes; a
/// query inspects only the bucket under the query point.
#[derive(Debug, Clone)]
pub struct TileLocator {
    origin: Vec2,
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<u32>>,
    tiles: Vec<TrackTile>,
    long_half: f64,
}

/// Longitudinal half-extent of a tile band as a multiple of `tile_length`.
/// Bands overlap (1.5x coverage) so their union tiles the loop without gaps.
pub const TILE_BAND_OVERLAP: f64 = 1.5;

impl TileLocator {
    pub fn new(track: &Track) -> Self {
        let long_half = 0.5 * TILE_BAND_OVERLAP * track.tile_length;
        let pad = long_half + track.tiles.iter().map(|t| t.half_width).fold(0.0, f64::max);
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for t in &track.tiles {
            min.x = min.x.min(t.center.x);
            min.y = min.y.min(t.center.y);
            max.x = max.x.max(t.center.x);
            max.y = max.y.max(t.center.y);
        }
        min = min - Vec2::new(pad + 1.0, pad + 1.0);
        max = max + Vec2::new(pad + 1.0, pad + 1.0);

        let cell = 4.0_f64;
        let cols = (((max.x - min.x) / cell).ceil() as usize).max(1);
        let rows = (((max.y - min.y) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); cols * rows];

        for t in &track.tiles {
            let r = long_half + t.half_width;
            let lo_c = (((t.center.x - r - min.x) / cell).floor() as isize).max(0) as usize;
            let hi_c = (((t.center.x + r - min.x) / cell).floor() as usize).min(cols - 1);
            let lo_r = (((t.center.y - r - min.y) / cell).floor() as isize).max(0) as usize;
            let hi_r = (((t.center.y + r - min.y) / cell).floor() as usize).min(rows - 1);
            for gy in lo_r..=hi_r {
                for gx in lo_c..=hi_c {
                    buckets[gy * cols + gx].push(t.index as u32);
                }
            }
        }

        TileLocator {
            origin: min,
            cell,
            cols,
            rows,
            buckets,
            tiles: track.tiles.clone(),
            long_half,
        }
    }

    /// Returns the containing tile index and the signed lateral offset (left
    /// positive), or `None` when the position lies on grass.
    ///
    /// When several overlapping bands contain the point, the tile with the
    /// nearest center wins; ties break toward the lowest index.
    pub fn locate(&self, position: Vec2) -> Option<(usize, f64)> {
        let gx = ((position.x - self.origin.x) / self.cell).floor();
        let gy = ((position.y - self.origin.y) / self.cell).floor();
        if gx < 0.0 || gy < 0.0 || gx >= self.cols as f64 || gy >= self.rows as f64 {
            return None;
        }
        let bucket = &self.buckets[gy as usize * self.cols + gx as usize];

        let mut best: Option<(usize, f64, f64)> = None; // (index, lateral, dist_sq)
        for &ti in bucket {
            let tile = &self.tiles[ti as usize];
            let delta = position - tile.center;
            let dir = Vec2::from_angle(tile.heading);
            let s = delta.dot(dir);
            let l = delta.dot(dir.perp());
            if s.abs() <= self.long_half && l.abs() <= tile.half_width {
                let d = delta.norm_sq();
                let better = match best {
                    None => true,
                    Some((bi, _, bd)) => d < bd || (d == bd && (ti as usize) < bi),
                };
                if better {
                    best = Some((ti as usize, l, d));
                }
            }
        }
        best.map(|(i, l, _)| (i, l))
    }
}
