//! First-person dodging: fireballs fly from the far wall toward the agent,
//! which can only strafe. One point per surviving step.

use std::collections::HashMap;

use attn_core::{Action, ActionSpec, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::draw::{draw_text, fill_disc, text_width};
use crate::env::{check_action, EnvError, EnvSpec, EnvStep, Environment};
use crate::modification::{EnvFamily, EnvModification};
use crate::FRAME_SIZE;

pub const MAX_STEPS: usize = 2100;
pub const SOLVE_THRESHOLD: f64 = 750.0;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const STAY: usize = 2;

const ROOM_HALF: f64 = 10.0;
const AGENT_LIMIT: f64 = 9.2;
const MOVE: f64 = 0.35;
const SPAWN_DEPTH: f64 = 20.0;
const FIREBALL_SPEED: f64 = 0.28;
const HIT_RADIUS: f64 = 1.1;
const AIM_NOISE: f64 = 0.4;
const MONSTERS: usize = 6;
const FIRST_SPAWN: (usize, usize) = (8, 24);
/// Mean spawn interval shrinks linearly from the first to the second value.
const SPAWN_INTERVAL: (f64, f64) = (30.0, 12.0);
const RAMP_STEPS: f64 = 1500.0;
const MUZZLE_FLASH: usize = 6;
const BACKGROUND_CACHE: usize = 512;

const WALL_TOP: usize = 12;
const HORIZON: usize = 30;
const PANEL_TOP: usize = 84;
const SCALE_FAR: f64 = 3.0;
const SCALE_NEAR: f64 = 7.0;

const CEILING: [u8; 3] = [48, 48, 52];
const BRICK: [u8; 3] = [120, 88, 60];
const MORTAR: [u8; 3] = [84, 62, 44];
const SIDE_WALL: [u8; 3] = [62, 46, 36];
const FLOOR: [[u8; 3]; 2] = [[92, 82, 66], [74, 66, 54]];
const FLOOR_ALT: [[u8; 3]; 2] = [[40, 60, 110], [170, 176, 196]];
const MONSTER: [u8; 3] = [150, 60, 50];
const MONSTER_FIRING: [u8; 3] = [235, 90, 60];
const FIRE_OUTER: [u8; 3] = [255, 110, 0];
const FIRE_CORE: [u8; 3] = [255, 232, 120];
const PANEL: [u8; 3] = [100, 100, 100];
const FACE: [u8; 3] = [228, 178, 130];
const TEXT_BOX: [u8; 3] = [30, 60, 220];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fireball {
    pub x: f64,
    /// Distance from the agent's plane; hits are resolved when it reaches 0.
    pub z: f64,
    pub vx: f64,
}

#[derive(Clone, Debug)]
struct Episode {
    rng: ChaCha8Rng,
    agent_x: f64,
    fireballs: Vec<Fireball>,
    next_spawn: usize,
    last_fired: Vec<Option<usize>>,
    steps: usize,
    done: bool,
}

impl Episode {
    fn schedule_spawn(&mut self) {
        let ramp = (self.steps as f64 / RAMP_STEPS).min(1.0);
        let mean = SPAWN_INTERVAL.0 + (SPAWN_INTERVAL.1 - SPAWN_INTERVAL.0) * ramp;
        let interval = (mean * self.rng.random_range(0.6..1.4)).round().max(1.0) as usize;
        self.next_spawn = self.steps + interval;
    }

    fn spawn(&mut self) {
        let monster = self.rng.random_range(0..MONSTERS);
        let origin = monster_x(monster);
        let noise = Normal::new(0.0, AIM_NOISE).expect("valid std").sample(&mut self.rng);
        let target = (self.agent_x + noise).clamp(-ROOM_HALF, ROOM_HALF);
        let flight = SPAWN_DEPTH / FIREBALL_SPEED;
        self.fireballs.push(Fireball {
            x: origin,
            z: SPAWN_DEPTH,
            vx: (target - origin) / flight,
        });
        self.last_fired[monster] = Some(self.steps);
    }
}

fn monster_x(i: usize) -> f64 {
    -ROOM_HALF + (i as f64 + 0.5) * 2.0 * ROOM_HALF / MONSTERS as f64
}

/// Dodging environment with discrete actions `[left, right, stay]`.
#[derive(Clone, Debug)]
pub struct Dodge {
    spec: EnvSpec,
    mods: Vec<EnvModification>,
    episode: Option<Episode>,
    /// Rendered backgrounds keyed by the agent position bits.
    backgrounds: HashMap<u64, Vec<u8>>,
}

impl Default for Dodge {
    fn default() -> Self {
        Self::new()
    }
}

impl Dodge {
    pub const NAME: &'static str = "dodge";

    pub fn new() -> Self {
        Dodge {
            spec: EnvSpec {
                name: Self::NAME.to_string(),
                frame_width: FRAME_SIZE,
                frame_height: FRAME_SIZE,
                action: Self::action_spec(),
                max_steps: MAX_STEPS,
                solve_threshold: Some(SOLVE_THRESHOLD),
                min_score: Some(0.0),
            },
            mods: Vec::new(),
            episode: None,
            backgrounds: HashMap::new(),
        }
    }

    pub fn action_spec() -> ActionSpec {
        ActionSpec::Discrete { n: 3 }
    }

    pub fn with_modification(mut self, m: EnvModification) -> Result<Self, EnvError> {
        m.check_family(EnvFamily::Dodge)?;
        self.backgrounds.clear();
        self.spec.name = format!("{}+{}", self.spec.name, m.name());
        self.mods.push(m);
        Ok(self)
    }

    pub fn modifications(&self) -> &[EnvModification] {
        &self.mods
    }

    pub fn agent_x(&self) -> Option<f64> {
        self.episode.as_ref().map(|e| e.agent_x)
    }

    pub fn fireballs(&self) -> &[Fireball] {
        self.episode.as_ref().map_or(&[], |e| &e.fireballs)
    }

    pub fn steps(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.steps)
    }

    fn render(&mut self) -> RgbImage {
        let ep = self.episode.as_ref().expect("episode present");
        let key = ep.agent_x.to_bits();
        if !self.backgrounds.contains_key(&key) {
            if self.backgrounds.len() >= BACKGROUND_CACHE {
                self.backgrounds.clear();
            }
            self.backgrounds.insert(key, background(&self.mods, ep.agent_x));
        }
        let buf = self.backgrounds[&key].clone();
        let mut img = RgbImage::from_raw(FRAME_SIZE, FRAME_SIZE, buf).expect("frame buffer has the right size");
        let center = FRAME_SIZE as f64 / 2.0;
        let depth_rows = (PANEL_TOP - HORIZON) as f64;
        for (i, fired) in ep.last_fired.iter().enumerate() {
            let sx = center + (monster_x(i) - ep.agent_x) * SCALE_FAR;
            let firing = fired.is_some_and(|s| ep.steps.saturating_sub(s) < MUZZLE_FLASH);
            let rgb = if firing { MONSTER_FIRING } else { MONSTER };
            let x0 = sx.round() as i64 - 2;
            img.fill_rect(x0, HORIZON as i64 - 8, x0 + 4, HORIZON as i64, rgb);
        }

        let mut balls: Vec<&Fireball> = ep.fireballs.iter().collect();
        balls.sort_by(|a, b| b.z.total_cmp(&a.z));
        for f in balls {
            let t = 1.0 - f.z / SPAWN_DEPTH;
            let sy = HORIZON as f64 + t * depth_rows;
            let scale = SCALE_FAR + (SCALE_NEAR - SCALE_FAR) * t;
            let sx = center + (f.x - ep.agent_x) * scale;
            let radius = 1.2 + 4.0 * t;
            fill_disc(&mut img, sx, sy, radius, FIRE_OUTER);
            fill_disc(&mut img, sx, sy, radius * 0.5, FIRE_CORE);
        }

        img
    }
}

fn has(mods: &[EnvModification], pred: impl Fn(&EnvModification) -> bool) -> bool {
    mods.iter().any(pred)
}

/// Everything that depends only on the agent's lateral position: ceiling,
/// walls, floor, status panel and any hover text.
fn background(mods: &[EnvModification], agent_x: f64) -> Vec<u8> {
        let center = FRAME_SIZE as f64 / 2.0;
        let higher = has(mods, |m| matches!(m, EnvModification::HigherWalls));
        let (floor_colors, cell) = if has(mods, |m| matches!(m, EnvModification::FloorTexture)) {
            (FLOOR_ALT, 1.0)
        } else {
            (FLOOR, 2.0)
        };
        let wall_top = if higher { 0 } else { WALL_TOP };
        let row_len = FRAME_SIZE * 3;
        let mut buf = vec![0u8; FRAME_SIZE * row_len];
        // coordinates are shifted by an even positive offset so truncation
        // acts as floor and parity is preserved
        let shift = 1024.0;

        for row in buf[..wall_top * row_len].chunks_exact_mut(3) {
            row.copy_from_slice(&CEILING);
        }
        for py in wall_top..HORIZON {
            let course = (HORIZON - 1 - py) / 4;
            let mortar_row = (HORIZON - 1 - py) % 4 == 3;
            let offset = if course % 2 == 0 { 0.0 } else { 1.0 };
            let row = &mut buf[py * row_len..(py + 1) * row_len];
            for (px, out) in row.chunks_exact_mut(3).enumerate() {
                let x = agent_x + (px as f64 + 0.5 - center) / SCALE_FAR;
                let rgb = if x.abs() > ROOM_HALF {
                    SIDE_WALL
                } else {
                    let u = x * SCALE_FAR / 2.0 + offset + shift;
                    let brick_u = u - ((u as u64) & !3) as f64;
                    if mortar_row || brick_u < 0.5 {
                        MORTAR
                    } else {
                        BRICK
                    }
                };
                out.copy_from_slice(&rgb);
            }
        }

        let depth_rows = (PANEL_TOP - HORIZON) as f64;
        for py in HORIZON..PANEL_TOP {
            let t = (py as f64 + 0.5 - HORIZON as f64) / depth_rows;
            let z = SPAWN_DEPTH * (1.0 - t);
            let inv_scale = 1.0 / (SCALE_FAR + (SCALE_NEAR - SCALE_FAR) * t);
            let zc = (z / cell + shift) as u64;
            let row = &mut buf[py * row_len..(py + 1) * row_len];
            let mut x = agent_x + (0.5 - center) * inv_scale;
            for out in row.chunks_exact_mut(3) {
                let rgb = if x.abs() > ROOM_HALF {
                    SIDE_WALL
                } else {
                    let xc = (x / cell + shift) as u64;
                    floor_colors[((xc + zc) % 2) as usize]
                };
                out.copy_from_slice(&rgb);
                x += inv_scale;
            }
        }
        let mut img = RgbImage::from_raw(FRAME_SIZE, FRAME_SIZE, buf).expect("frame buffer has the right size");
        let size = FRAME_SIZE as i64;
        img.fill_rect(0, PANEL_TOP as i64, size, size, PANEL);
        img.fill_rect(8, PANEL_TOP as i64 + 3, 30, size - 3, [70, 70, 70]);
        img.fill_rect(size - 30, PANEL_TOP as i64 + 3, size - 8, size - 3, [70, 70, 70]);
        img.fill_rect(43, PANEL_TOP as i64 + 1, 53, size - 1, FACE);
        img.put_pixel(45, PANEL_TOP + 4, [20, 20, 20]);
        img.put_pixel(50, PANEL_TOP + 4, [20, 20, 20]);

        for m in mods {
            if let EnvModification::HoverText { text } = m {
                let w = text_width(text) as i64 + 8;
                let x0 = (size - w) / 2;
                img.fill_rect(x0, 2, x0 + w, 11, TEXT_BOX);
                draw_text(&mut img, x0 as usize + 4, 4, text, [255, 255, 255]);
            }
        }
        img.into_bytes()
}

impl Environment for Dodge {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<RgbImage, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = rng.random_range(FIRST_SPAWN.0..=FIRST_SPAWN.1);
        let ep = Episode {
            rng,
            agent_x: 0.0,
            fireballs: Vec::new(),
            next_spawn: first,
            last_fired: vec![None; MONSTERS],
            steps: 0,
            done: false,
        };
        self.episode = Some(ep);
        Ok(self.render())
    }

    fn step(&mut self, action: &Action) -> Result<EnvStep, EnvError> {
        check_action(&self.spec.action, action)?;
        let ep = self.episode.as_mut().ok_or(EnvError::NotReset)?;
        if ep.done {
            return Err(EnvError::StepAfterDone);
        }
        let &Action::Discrete(a) = action else {
            unreachable!("checked against a discrete spec")
        };
        let dx = match a {
            LEFT => -MOVE,
            RIGHT => MOVE,
            _ => 0.0,
        };
        ep.agent_x = (ep.agent_x + dx).clamp(-AGENT_LIMIT, AGENT_LIMIT);

        let mut hit = false;
        let agent_x = ep.agent_x;
        ep.fireballs.retain_mut(|f| {
            f.z -= FIREBALL_SPEED;
            f.x += f.vx;
            if f.z <= 0.0 {
                hit |= (f.x - agent_x).abs() < HIT_RADIUS;
                false
            } else {
                true
            }
        });

        ep.steps += 1;
        if ep.steps >= ep.next_spawn {
            ep.spawn();
            ep.schedule_spawn();
        }
        ep.done = hit || ep.steps >= MAX_STEPS;
        let reward = if hit { 0.0 } else { 1.0 };
        let done = ep.done;
        Ok(EnvStep {
            observation: self.render(),
            reward,
            done,
        })
    }
}
