use attn_core::{Action, RgbImage};

use crate::dodge::Dodge;
use crate::env::{EnvError, EnvSpec, EnvStep, Environment};
use crate::lane_racer::LaneRacer;
use crate::modification::{EnvFamily, EnvModification};

/// One of the built-in environments, possibly modified.
#[derive(Clone, Debug)]
pub enum BuiltinEnv {
    LaneRacer(LaneRacer),
    Dodge(Dodge),
}

impl BuiltinEnv {
    pub const NAMES: [&'static str; 2] = [LaneRacer::NAME, Dodge::NAME];

    /// Looks an environment up by name (`lane-racer` or `dodge`).
    pub fn named(name: &str) -> Result<Self, EnvError> {
        match name.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "lane-racer" | "laneracer" => Ok(BuiltinEnv::LaneRacer(LaneRacer::new())),
            "dodge" => Ok(BuiltinEnv::Dodge(Dodge::new())),
            _ => Err(EnvError::Config(format!(
                "unknown environment {name:?}; expected one of {}",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn family(&self) -> EnvFamily {
        match self {
            BuiltinEnv::LaneRacer(_) => EnvFamily::LaneRacer,
            BuiltinEnv::Dodge(_) => EnvFamily::Dodge,
        }
    }
}

impl From<LaneRacer> for BuiltinEnv {
    fn from(env: LaneRacer) -> Self {
        BuiltinEnv::LaneRacer(env)
    }
}

impl From<Dodge> for BuiltinEnv {
    fn from(env: Dodge) -> Self {
        BuiltinEnv::Dodge(env)
    }
}

/// Wraps `env` so it renders with `m`. Fails when `m` belongs to the other
/// family.
pub fn apply_modification(env: BuiltinEnv, m: EnvModification) -> Result<BuiltinEnv, EnvError> {
    Ok(match env {
        BuiltinEnv::LaneRacer(e) => BuiltinEnv::LaneRacer(e.with_modification(m)?),
        BuiltinEnv::Dodge(e) => BuiltinEnv::Dodge(e.with_modification(m)?),
    })
}

impl Environment for BuiltinEnv {
    fn spec(&self) -> &EnvSpec {
        match self {
            BuiltinEnv::LaneRacer(e) => e.spec(),
            BuiltinEnv::Dodge(e) => e.spec(),
        }
    }

    fn reset(&mut self, seed: u64) -> Result<RgbImage, EnvError> {
        match self {
            BuiltinEnv::LaneRacer(e) => e.reset(seed),
            BuiltinEnv::Dodge(e) => e.reset(seed),
        }
    }

    fn step(&mut self, action: &Action) -> Result<EnvStep, EnvError> {
        match self {
            BuiltinEnv::LaneRacer(e) => e.step(action),
            BuiltinEnv::Dodge(e) => e.step(action),
        }
    }
}
