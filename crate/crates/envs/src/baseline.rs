use attn_core::cmaes::mix64;
use attn_core::{Action, ActionSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvError, Environment};

/// Mean and population standard deviation of episode scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreStats {
    pub mean: f64,
    pub std: f64,
    pub scores: Vec<f64>,
}

impl ScoreStats {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let n = scores.len().max(1) as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        ScoreStats {
            mean,
            std: var.sqrt(),
            scores,
        }
    }
}

pub fn random_action(spec: &ActionSpec, rng: &mut impl Rng) -> Action {
    match spec {
        ActionSpec::Continuous { bounds } => Action::Continuous(
            bounds
                .iter()
                .map(|&(lo, hi)| if lo < hi { rng.random_range(lo..=hi) } else { lo })
                .collect(),
        ),
        ActionSpec::Discrete { n } => Action::Discrete(rng.random_range(0..*n)),
    }
}

/// Seed of episode `i` in a baseline or replay run.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    mix64(seed ^ mix64(i as u64 ^ 0x5eed_0000_0000))
}

/// Runs `policy` for one episode and returns the total reward.
pub fn run_episode<E, P>(env: &mut E, seed: u64, mut policy: P) -> Result<f64, EnvError>
where
    E: Environment + ?Sized,
    P: FnMut(usize) -> Action,
{
    env.reset(seed)?;
    let mut total = 0.0;
    for t in 0.. {
        let step = env.step(&policy(t))?;
        total += step.reward;
        if step.done {
            break;
        }
    }
    Ok(total)
}

/// Scores of a uniform-random policy. Deterministic given `seed`.
pub fn random_baseline<E: Environment + ?Sized>(
    env: &mut E,
    episodes: usize,
    seed: u64,
) -> Result<ScoreStats, EnvError> {
    if episodes == 0 {
        return Err(EnvError::Config("baseline needs at least one episode".into()));
    }
    let spec = env.spec().action.clone();
    let mut scores = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let s = episode_seed(seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(s));
        scores.push(run_episode(env, s, |_| random_action(&spec, &mut rng))?);
    }
    Ok(ScoreStats::from_scores(scores))
}
