//! Built-in pixel environments: a top-down racer and a first-person dodging
//! game, both rendering 96×96 RGB frames, plus rendering-only modifications
//! used for generalization tests.

mod baseline;
mod builtin;
mod draw;
mod env;
mod log;
mod modification;

pub mod dodge;
pub mod lane_racer;

pub use baseline::{episode_seed, random_action, random_baseline, run_episode, ScoreStats};
pub use builtin::{apply_modification, BuiltinEnv};
pub use dodge::Dodge;
pub use env::{EnvError, EnvSpec, EnvStep, Environment};
pub use lane_racer::{LaneRacer, Track};
pub use log::{read_records, StepRecord};
pub use modification::{EnvFamily, EnvModification};

/// Side length of every built-in frame.
pub const FRAME_SIZE: usize = 96;

/// Seed for rendering-only randomness, kept apart from the dynamics stream so
/// modifications cannot perturb the episode.
pub(crate) fn render_seed(seed: u64) -> u64 {
    attn_core::cmaes::mix64(seed ^ 0x7265_6e64_6572)
}
