use attn_core::{Action, AttentionAgent, Error as CoreError, Frame, Genome, RgbImage, AgentConfig, Scalar};
use attn_envs::Environment;
use log::warn;

use crate::error::Result;

/// Nearest-neighbor resize to `size`×`size`, then scale bytes to `[0, 1]`.
pub fn preprocess<T: Scalar>(image: &RgbImage, size: usize) -> Frame<T> {
    if image.width() == size && image.height() == size {
        image.to_frame()
    } else {
        image.resize_nearest(size, size).to_frame()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutOptions {
    /// Stops the episode early; the environment's own limit always applies.
    pub max_steps: Option<usize>,
    pub trace: bool,
    /// Keep the raw observation each decision was made from (needs `trace`).
    pub keep_frames: bool,
}

impl RolloutOptions {
    pub fn traced() -> Self {
        RolloutOptions {
            trace: true,
            ..Default::default()
        }
    }

    pub fn with_frames() -> Self {
        RolloutOptions {
            trace: true,
            keep_frames: true,
            ..Default::default()
        }
    }
}

/// What the agent saw and did at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep<T> {
    pub selected: Vec<usize>,
    pub importance: Vec<T>,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
    pub frame: Option<RgbImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace<T> {
    pub steps: Vec<TraceStep<T>>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout<T> {
    pub score: f64,
    pub steps: usize,
    /// The controller produced non-finite values and the episode was cut.
    pub aborted: bool,
    pub trace: Option<EpisodeTrace<T>>,
}

/// Plays one episode. The controller state starts from zero.
pub fn rollout_episode<T: Scalar, E: Environment + ?Sized>(
    agent: &AttentionAgent<T>,
    env: &mut E,
    seed: u64,
    options: &RolloutOptions,
) -> Result<Rollout<T>> {
    let size = agent.config().input_size;
    let limit = options.max_steps.unwrap_or(usize::MAX);
    let mut state = agent.initial_state();
    let mut observation = env.reset(seed)?;
    let mut trace = options.trace.then(Vec::new);
    let mut score = 0.0;
    let mut steps = 0;
    while steps < limit {
        let frame = preprocess::<T>(&observation, size);
        let (action, glimpse) = match agent.act(&frame, &mut state) {
            Ok(out) => out,
            Err(CoreError::NonFinite { what, location }) => {
                warn!("non-finite {what} at {location} on step {steps}; aborting episode");
                let floor = env.spec().min_score.unwrap_or(f64::NAN);
                return Ok(Rollout {
                    score: floor,
                    steps,
                    aborted: true,
                    trace: trace.map(|steps| EpisodeTrace { steps, score: floor }),
                });
            }
            Err(e) => return Err(e.into()),
        };
        let step = env.step(&action)?;
        score += step.reward;
        steps += 1;
        if let Some(t) = trace.as_mut() {
            t.push(TraceStep {
                selected: glimpse.selected,
                importance: glimpse.importance,
                action,
                reward: step.reward,
                done: step.done,
                frame: options.keep_frames.then_some(observation),
            });
        }
        observation = step.observation;
        if step.done {
            break;
        }
    }
    Ok(Rollout {
        score,
        steps,
        aborted: false,
        trace: trace.map(|steps| EpisodeTrace { steps, score }),
    })
}

/// Mean score over one episode per seed. Any failed episode makes the result
/// NaN, which the optimizer ranks last.
pub fn evaluate_fitness<T: Scalar, E: Environment + ?Sized>(
    genome: &Genome,
    config: &AgentConfig,
    env: &mut E,
    seeds: &[u64],
    options: &RolloutOptions,
) -> f64 {
    match try_evaluate::<T, E>(genome, config, env, seeds, options) {
        Ok(f) => f,
        Err(e) => {
            warn!("fitness evaluation failed: {e}");
            f64::NAN
        }
    }
}

pub(crate) fn try_evaluate<T: Scalar, E: Environment + ?Sized>(
    genome: &Genome,
    config: &AgentConfig,
    env: &mut E,
    seeds: &[u64],
    options: &RolloutOptions,
) -> Result<f64> {
    if seeds.is_empty() {
        return Err(crate::HarnessError::Config("fitness needs at least one rollout".into()));
    }
    let agent = AttentionAgent::<T>::from_genome(genome, config)?;
    let mut total = 0.0;
    for &seed in seeds {
        total += rollout_episode(&agent, env, seed, options)?.score;
    }
    Ok(total / seeds.len() as f64)
}
