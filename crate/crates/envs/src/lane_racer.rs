//! Top-down racing on a procedural closed track. Every tile touched for the
//! first time pays `1000 / n`; every step costs 0.1.

use std::f64::consts::{PI, TAU};

use attn_core::{Action, ActionSpec, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::draw::{fill_disc, shift_color};
use crate::env::{check_action, EnvError, EnvSpec, EnvStep, Environment};
use crate::modification::{EnvFamily, EnvModification};
use crate::{render_seed, FRAME_SIZE};

pub const MAX_STEPS: usize = 1000;
pub const STEP_PENALTY: f64 = 0.1;
pub const TRACK_REWARD: f64 = 1000.0;
pub const SOLVE_THRESHOLD: f64 = 900.0;

const TILE_LENGTH: f64 = 8.0;
const HALF_WIDTH: f64 = 8.0;
const CURB_WIDTH: f64 = 1.5;
const CONTROL_POINTS: usize = 12;
const TRACK_RADIUS: f64 = 100.0;
const SAMPLES_PER_SEGMENT: usize = 24;
const STAMP_SPACING: f64 = 0.5;
const CURB_TURN: f64 = 0.2;

const ACCEL: f64 = 0.1;
const BRAKE: f64 = 0.3;
const MAX_SPEED: f64 = 3.0;
const DRAG_ROAD: f64 = 0.99;
const DRAG_GRASS: f64 = 0.94;
const STEER_RATE: f64 = 0.12;

const PX_PER_UNIT: f64 = 1.6;
const CAR_X: f64 = 48.0;
const CAR_Y: f64 = 66.0;
const PANEL_TOP: usize = 84;
const GRASS_SQUARE: f64 = 16.0;
/// Even shift that keeps grass square indices positive.
const GRASS_OFFSET: f64 = 1.0e6;

const ROAD: [u8; 3] = [102, 102, 102];
const GRASS: [u8; 3] = [102, 204, 102];
const GRASS_ALT: [u8; 3] = [102, 230, 102];
const CURB_RED: [u8; 3] = [255, 0, 0];
const CURB_WHITE: [u8; 3] = [255, 255, 255];
const CAR: [u8; 3] = [204, 0, 0];
const BLOB: [u8; 3] = [230, 20, 20];

/// Raster lookup from world position to tile index.
#[derive(Clone, Debug)]
struct TileMap {
    min: [f64; 2],
    side: usize,
    tile: Vec<i32>,
    dist: Vec<f32>,
}

impl TileMap {
    fn cell(&self, x: f64, y: f64) -> Option<usize> {
        let cx = x - self.min[0];
        let cy = y - self.min[1];
        if !(cx >= 0.0 && cy >= 0.0 && cx < self.side as f64 && cy < self.side as f64) {
            return None;
        }
        // truncation is floor here and much cheaper than f64::floor
        Some(cy as usize * self.side + cx as usize)
    }

    fn lookup(&self, x: f64, y: f64) -> Option<(usize, f32)> {
        let i = self.cell(x, y)?;
        let t = self.tile[i];
        (t >= 0).then(|| (t as usize, self.dist[i]))
    }
}

/// Closed track centerline cut into equal-length tiles.
#[derive(Clone, Debug)]
pub struct Track {
    tiles: usize,
    length: f64,
    tile_centers: Vec<[f64; 2]>,
    tile_headings: Vec<f64>,
    curbs: Vec<bool>,
    map: TileMap,
}

fn catmull_rom(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], t: f64) -> [f64; 2] {
    let t2 = t * t;
    let t3 = t2 * t;
    let f = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * (2.0 * b + (c - a) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (3.0 * b - a - 3.0 * c + d) * t3)
    };
    [f(p0[0], p1[0], p2[0], p3[0]), f(p0[1], p1[1], p2[1], p3[1])]
}

fn signed_area(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let a = points[i];
            let b = points[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

impl Track {
    /// Random track: a jittered polygon around the origin smoothed by a closed
    /// Catmull-Rom spline, traversed counter-clockwise.
    pub fn generate(rng: &mut impl Rng) -> Track {
        let control: Vec<[f64; 2]> = (0..CONTROL_POINTS)
            .map(|k| {
                let jitter = rng.random_range(-0.3..0.3) * TAU / CONTROL_POINTS as f64;
                let angle = TAU * k as f64 / CONTROL_POINTS as f64 + jitter;
                let radius = TRACK_RADIUS * rng.random_range(0.55..1.0);
                [radius * angle.cos(), radius * angle.sin()]
            })
            .collect();
        let m = control.len();
        let mut line = Vec::with_capacity(m * SAMPLES_PER_SEGMENT);
        for i in 0..m {
            let p = |j: usize| control[(i + j + m - 1) % m];
            for s in 0..SAMPLES_PER_SEGMENT {
                line.push(catmull_rom(p(0), p(1), p(2), p(3), s as f64 / SAMPLES_PER_SEGMENT as f64));
            }
        }
        let length = polyline_length(&line);
        let tiles = ((length / TILE_LENGTH).round() as usize).max(3);
        Track::from_centerline(&line, tiles).expect("generated track is valid")
    }

    /// Circle of the given radius centered at the origin with exactly `tiles`
    /// tiles.
    pub fn circle(tiles: usize, radius: f64) -> Result<Track, EnvError> {
        let samples = 720;
        let line: Vec<[f64; 2]> = (0..samples)
            .map(|i| {
                let a = TAU * i as f64 / samples as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Track::from_centerline(&line, tiles)
    }

    /// Builds a track from a closed centerline (the last point connects back to
    /// the first). A clockwise polyline is reversed.
    pub fn from_centerline(points: &[[f64; 2]], tiles: usize) -> Result<Track, EnvError> {
        if points.len() < 3 || tiles < 3 {
            return Err(EnvError::Config(format!(
                "track needs at least 3 points and 3 tiles, got {} and {tiles}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EnvError::Config("track centerline has non-finite points".into()));
        }
        let mut line = points.to_vec();
        if signed_area(&line) < 0.0 {
            line.reverse();
        }
        let length = polyline_length(&line);
        let tile_len = length / tiles as f64;

        let n = line.len();
        let mut cumulative = Vec::with_capacity(n + 1);
        cumulative.push(0.0);
        for i in 0..n {
            let (a, b) = (line[i], line[(i + 1) % n]);
            cumulative.push(cumulative[i] + ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt());
        }
        // position and heading at arc length s
        let at = |s: f64| -> ([f64; 2], f64) {
            let s = s.rem_euclid(length);
            let i = match cumulative.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
                Ok(i) => i.min(n - 1),
                Err(i) => i - 1,
            };
            let (a, b) = (line[i], line[(i + 1) % n]);
            let seg = cumulative[i + 1] - cumulative[i];
            let t = if seg > 0.0 { (s - cumulative[i]) / seg } else { 0.0 };
            (
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])],
                (b[1] - a[1]).atan2(b[0] - a[0]),
            )
        };

        let mut tile_centers = Vec::with_capacity(tiles);
        let mut tile_headings = Vec::with_capacity(tiles);
        let mut curbs = Vec::with_capacity(tiles);
        for t in 0..tiles {
            let (c, h) = at((t as f64 + 0.5) * tile_len);
            tile_centers.push(c);
            tile_headings.push(h);
            let turn = wrap_angle(at((t + 1) as f64 * tile_len).1 - at(t as f64 * tile_len).1);
            curbs.push(turn.abs() > CURB_TURN);
        }

        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &line {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let margin = HALF_WIDTH + 2.0;
        let min = [(lo[0] - margin).floor(), (lo[1] - margin).floor()];
        let side = ((hi[0] - lo[0]).max(hi[1] - lo[1]) + 2.0 * margin).ceil() as usize + 1;
        let mut map = TileMap {
            min,
            side,
            tile: vec![-1; side * side],
            dist: vec![f32::INFINITY; side * side],
        };
        let stamps = (length / STAMP_SPACING).ceil() as usize;
        let reach = HALF_WIDTH.ceil() as i64 + 1;
        for k in 0..stamps {
            let s = k as f64 * length / stamps as f64;
            let tile = ((s / tile_len) as usize).min(tiles - 1) as i32;
            let (p, _) = at(s);
            let cx = (p[0] - min[0]).floor() as i64;
            let cy = (p[1] - min[1]).floor() as i64;
            for y in (cy - reach).max(0)..(cy + reach + 1).min(side as i64) {
                for x in (cx - reach).max(0)..(cx + reach + 1).min(side as i64) {
                    let wx = min[0] + x as f64 + 0.5;
                    let wy = min[1] + y as f64 + 0.5;
                    let d = ((wx - p[0]).powi(2) + (wy - p[1]).powi(2)).sqrt();
                    let i = y as usize * side + x as usize;
                    if d <= HALF_WIDTH && (d as f32) < map.dist[i] {
                        map.dist[i] = d as f32;
                        map.tile[i] = tile;
                    }
                }
            }
        }

        Ok(Track {
            tiles,
            length,
            tile_centers,
            tile_headings,
            curbs,
            map,
        })
    }

    pub fn tiles(&self) -> usize {
        self.tiles
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn tile_center(&self, tile: usize) -> [f64; 2] {
        self.tile_centers[tile]
    }

    pub fn tile_heading(&self, tile: usize) -> f64 {
        self.tile_headings[tile]
    }

    /// Tile under a world position, if it is on the road.
    pub fn tile_at(&self, x: f64, y: f64) -> Option<usize> {
        self.map.lookup(x, y).map(|(t, _)| t)
    }

    fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let side = self.map.side as f64;
        (self.map.min, [self.map.min[0] + side, self.map.min[1] + side])
    }
}

fn polyline_length(line: &[[f64; 2]]) -> f64 {
    let n = line.len();
    (0..n)
        .map(|i| {
            let (a, b) = (line[i], line[(i + 1) % n]);
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarPose {
    pub x: f64,
    pub y: f64,
    /// Radians, counter-clockwise from +x.
    pub heading: f64,
    pub speed: f64,
}

#[derive(Clone, Debug)]
struct Episode {
    track: Track,
    car: CarPose,
    visited: Vec<bool>,
    visited_count: usize,
    steps: usize,
    done: bool,
    lane_color: [u8; 3],
    grass_colors: [[u8; 3]; 2],
}

/// Racing environment. Actions are `[steer, gas, brake]` with steer in
/// `[-1, 1]` (positive turns right) and pedals in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct LaneRacer {
    spec: EnvSpec,
    mods: Vec<EnvModification>,
    fixed_track: Option<Track>,
    episode: Option<Episode>,
}

impl Default for LaneRacer {
    fn default() -> Self {
        Self::new()
    }
}

impl LaneRacer {
    pub const NAME: &'static str = "lane-racer";

    pub fn new() -> Self {
        LaneRacer {
            spec: EnvSpec {
                name: Self::NAME.to_string(),
                frame_width: FRAME_SIZE,
                frame_height: FRAME_SIZE,
                action: Self::action_spec(),
                max_steps: MAX_STEPS,
                solve_threshold: Some(SOLVE_THRESHOLD),
                min_score: Some(-STEP_PENALTY * MAX_STEPS as f64),
            },
            mods: Vec::new(),
            fixed_track: None,
            episode: None,
        }
    }

    pub fn action_spec() -> ActionSpec {
        ActionSpec::Continuous {
            bounds: vec![(-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
        }
    }

    /// Uses the same track every episode instead of generating one per seed.
    pub fn with_track(track: Track) -> Self {
        LaneRacer {
            fixed_track: Some(track),
            ..Self::new()
        }
    }

    pub fn with_modification(mut self, m: EnvModification) -> Result<Self, EnvError> {
        m.check_family(EnvFamily::LaneRacer)?;
        self.spec.name = format!("{}+{}", self.spec.name, m.name());
        self.mods.push(m);
        Ok(self)
    }

    pub fn modifications(&self) -> &[EnvModification] {
        &self.mods
    }

    pub fn track(&self) -> Option<&Track> {
        self.episode.as_ref().map(|e| &e.track)
    }

    pub fn car(&self) -> Option<CarPose> {
        self.episode.as_ref().map(|e| e.car)
    }

    pub fn visited_count(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.visited_count)
    }

    pub fn steps(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.steps)
    }

    fn render(&self, ep: &Episode) -> RgbImage {
        let mut buf = vec![0u8; FRAME_SIZE * FRAME_SIZE * 3];
        let (sin, cos) = ep.car.heading.sin_cos();
        let track = &ep.track;
        let step = 1.0 / PX_PER_UNIT;
        for py in 0..PANEL_TOP {
            // screen up is the car's forward direction
            let fwd = (CAR_Y - (py as f64 + 0.5)) / PX_PER_UNIT;
            let right = (0.5 - CAR_X) / PX_PER_UNIT;
            let mut wx = ep.car.x + fwd * cos + right * sin;
            let mut wy = ep.car.y + fwd * sin - right * cos;
            let row = &mut buf[py * FRAME_SIZE * 3..(py + 1) * FRAME_SIZE * 3];
            for px in row.chunks_exact_mut(3) {
                let rgb = match track.map.lookup(wx, wy) {
                    Some((tile, d)) if d as f64 > HALF_WIDTH - CURB_WIDTH && track.curbs[tile] => {
                        if tile % 2 == 0 {
                            CURB_RED
                        } else {
                            CURB_WHITE
                        }
                    }
                    Some(_) => ep.lane_color,
                    None => {
                        let gx = (wx / GRASS_SQUARE + GRASS_OFFSET) as u64;
                        let gy = (wy / GRASS_SQUARE + GRASS_OFFSET) as u64;
                        ep.grass_colors[((gx + gy) % 2) as usize]
                    }
                };
                px.copy_from_slice(&rgb);
                wx += step * sin;
                wy -= step * cos;
            }
        }
        let mut img = RgbImage::from_raw(FRAME_SIZE, FRAME_SIZE, buf).expect("frame buffer has the right size");
        img.fill_rect(CAR_X as i64 - 2, CAR_Y as i64 - 4, CAR_X as i64 + 2, CAR_Y as i64 + 4, CAR);

        // status panel: speed bar
        img.fill_rect(0, PANEL_TOP as i64, FRAME_SIZE as i64, FRAME_SIZE as i64, [0, 0, 0]);
        let bar = ((ep.car.speed / MAX_SPEED) * 40.0).round() as usize;
        img.fill_rect(4, PANEL_TOP as i64 + 4, 4 + bar as i64, PANEL_TOP as i64 + 8, [255, 255, 255]);

        for m in &self.mods {
            match m {
                EnvModification::VerticalBars { width_fraction } => {
                    let w = (width_fraction * FRAME_SIZE as f64).round() as i64;
                    let size = FRAME_SIZE as i64;
                    img.fill_rect(0, 0, w, size, [0, 0, 0]);
                    img.fill_rect(size - w, 0, size, size, [0, 0, 0]);
                }
                EnvModification::BackgroundBlob { radius } => {
                    fill_disc(&mut img, CAR_X + 20.0, CAR_Y - 26.0, *radius, BLOB);
                }
                _ => {}
            }
        }
        img
    }
}

impl Environment for LaneRacer {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<RgbImage, EnvError> {
        let track = match &self.fixed_track {
            Some(t) => t.clone(),
            None => Track::generate(&mut ChaCha8Rng::seed_from_u64(seed)),
        };
        let start = track.tile_center(0);
        let car = CarPose {
            x: start[0],
            y: start[1],
            heading: track.tile_heading(0),
            speed: 0.0,
        };

        let mut lane_color = ROAD;
        let mut grass_colors = [GRASS, GRASS_ALT];
        let mut render_rng = ChaCha8Rng::seed_from_u64(render_seed(seed));
        for m in &self.mods {
            if let EnvModification::ColorPerturb { max_offset } = m {
                let lane: f64 = render_rng.random_range(-max_offset..=*max_offset);
                let grass: f64 = render_rng.random_range(-max_offset..=*max_offset);
                lane_color = shift_color(lane_color, lane);
                grass_colors = grass_colors.map(|c| shift_color(c, grass));
            }
        }

        let tiles = track.tiles();
        let ep = Episode {
            track,
            car,
            visited: vec![false; tiles],
            visited_count: 0,
            steps: 0,
            done: false,
            lane_color,
            grass_colors,
        };
        let frame = self.render(&ep);
        self.episode = Some(ep);
        Ok(frame)
    }

    fn step(&mut self, action: &Action) -> Result<EnvStep, EnvError> {
        check_action(&self.spec.action, action)?;
        let ep = self.episode.as_mut().ok_or(EnvError::NotReset)?;
        if ep.done {
            return Err(EnvError::StepAfterDone);
        }
        let Action::Continuous(a) = action else {
            unreachable!("checked against a continuous spec")
        };
        let (steer, gas, brake) = (a[0], a[1], a[2]);

        let car = &mut ep.car;
        let on_road = ep.track.tile_at(car.x, car.y).is_some();
        car.speed += ACCEL * gas - BRAKE * brake;
        car.speed *= if on_road { DRAG_ROAD } else { DRAG_GRASS };
        car.speed = car.speed.clamp(0.0, MAX_SPEED);
        car.heading = wrap_angle(car.heading - STEER_RATE * steer * (car.speed / 1.0).min(1.0));
        let (lo, hi) = ep.track.bounds();
        car.x = (car.x + car.speed * car.heading.cos()).clamp(lo[0], hi[0] - 1e-9);
        car.y = (car.y + car.speed * car.heading.sin()).clamp(lo[1], hi[1] - 1e-9);

        ep.steps += 1;
        let mut reward = -STEP_PENALTY;
        if let Some(tile) = ep.track.tile_at(car.x, car.y) {
            if !ep.visited[tile] {
                ep.visited[tile] = true;
                ep.visited_count += 1;
                reward += TRACK_REWARD / ep.track.tiles() as f64;
            }
        }
        ep.done = ep.visited_count == ep.track.tiles() || ep.steps >= MAX_STEPS;
        let done = ep.done;
        let ep = self.episode.as_ref().expect("episode present");
        Ok(EnvStep {
            observation: self.render(ep),
            reward,
            done,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_tracks_are_counter_clockwise() {
        for seed in 0..10 {
            let track = Track::generate(&mut ChaCha8Rng::seed_from_u64(seed));
            let centers: Vec<_> = (0..track.tiles()).map(|t| track.tile_center(t)).collect();
            assert!(signed_area(&centers) > 0.0, "seed {seed}");
            assert!(track.tiles() > 30);
        }
    }

    #[test]
    fn clockwise_centerline_is_reversed() {
        let cw: Vec<[f64; 2]> = (0..100)
            .map(|i| {
                let a = -TAU * i as f64 / 100.0;
                [50.0 * a.cos(), 50.0 * a.sin()]
            })
            .collect();
        let track = Track::from_centerline(&cw, 20).unwrap();
        let centers: Vec<_> = (0..20).map(|t| track.tile_center(t)).collect();
        assert!(signed_area(&centers) > 0.0);
    }

    #[test]
    fn tile_centers_map_to_their_tile() {
        let track = Track::circle(100, 100.0).unwrap();
        for t in 0..100 {
            let c = track.tile_center(t);
            assert_eq!(track.tile_at(c[0], c[1]), Some(t));
        }
        assert_eq!(track.tile_at(0.0, 0.0), None);
    }

    #[test]
    fn degenerate_track_rejected() {
        assert!(Track::from_centerline(&[[0.0, 0.0], [1.0, 0.0]], 5).is_err());
        assert!(Track::circle(2, 10.0).is_err());
    }
}
