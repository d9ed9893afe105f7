use attn_core::{Action, ActionSpec, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called after the episode ended; reset first")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// The transport to an external environment failed.
    #[error("session error: {0}")]
    Session(String),
    /// The external environment violated the wire protocol.
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub frame_width: usize,
    pub frame_height: usize,
    pub action: ActionSpec,
    pub max_steps: usize,
    /// Average score above which the task counts as solved.
    pub solve_threshold: Option<f64>,
    /// Lowest possible episode score, when known.
    pub min_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub observation: RgbImage,
    pub reward: f64,
    pub done: bool,
}

/// Episodic reset/step protocol shared by the built-in environments and
/// bridged external ones. Observations are raw 8-bit RGB; callers normalize.
pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    fn reset(&mut self, seed: u64) -> Result<RgbImage, EnvError>;

    fn step(&mut self, action: &Action) -> Result<EnvStep, EnvError>;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }

    fn reset(&mut self, seed: u64) -> Result<RgbImage, EnvError> {
        (**self).reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<EnvStep, EnvError> {
        (**self).step(action)
    }
}

pub(crate) fn check_action(spec: &ActionSpec, action: &Action) -> Result<(), EnvError> {
    if let Action::Continuous(values) = action {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::InvalidAction(format!("non-finite values {values:?}")));
        }
    }
    if !spec.contains(action) {
        return Err(EnvError::InvalidAction(format!("{action:?} is outside {spec:?}")));
    }
    Ok(())
}
