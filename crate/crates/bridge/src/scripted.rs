use attn_core::{Action, ActionSpec, RgbImage};
use attn_envs::{EnvError, EnvSpec, EnvStep, Environment};

/// Tiny deterministic environment for protocol fixtures: 4×4 frames whose
/// bytes depend on the seed and step, three continuous action dimensions and
/// episodes of exactly three steps.
#[derive(Clone, Debug)]
pub struct ScriptedEnv {
    spec: EnvSpec,
    seed: u64,
    t: usize,
    active: Option<bool>,
}

impl Default for ScriptedEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedEnv {
    pub const SIZE: usize = 4;
    pub const EPISODE_STEPS: usize = 3;

    pub fn new() -> Self {
        ScriptedEnv {
            spec: EnvSpec {
                name: "scripted".to_string(),
                frame_width: Self::SIZE,
                frame_height: Self::SIZE,
                action: ActionSpec::Continuous {
                    bounds: vec![(-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
                },
                max_steps: Self::EPISODE_STEPS,
                solve_threshold: None,
                min_score: None,
            },
            seed: 0,
            t: 0,
            active: None,
        }
    }

    pub fn frame(seed: u64, t: usize) -> RgbImage {
        let bytes = (0..Self::SIZE * Self::SIZE * 3)
            .map(|i| ((seed % 251) as usize + 7 * t + i) as u8)
            .collect();
        RgbImage::from_raw(Self::SIZE, Self::SIZE, bytes).expect("scripted frame size")
    }

    pub fn reward(t: usize, action: &[f64]) -> f64 {
        action[1] - action[2] + 0.125 * t as f64
    }
}

impl Environment for ScriptedEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<RgbImage, EnvError> {
        self.seed = seed;
        self.t = 0;
        self.active = Some(true);
        Ok(Self::frame(seed, 0))
    }

    fn step(&mut self, action: &Action) -> Result<EnvStep, EnvError> {
        match self.active {
            None => return Err(EnvError::NotReset),
            Some(false) => return Err(EnvError::StepAfterDone),
            Some(true) => {}
        }
        let Action::Continuous(values) = action else {
            return Err(EnvError::InvalidAction(format!("{action:?}")));
        };
        if !self.spec.action.contains(action) {
            return Err(EnvError::InvalidAction(format!("{values:?} out of bounds")));
        }
        self.t += 1;
        let done = self.t >= Self::EPISODE_STEPS;
        self.active = Some(!done);
        Ok(EnvStep {
            observation: Self::frame(self.seed, self.t),
            reward: Self::reward(self.t, values),
            done,
        })
    }
}
