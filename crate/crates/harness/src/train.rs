use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use attn_core::{
    read_genome, write_genome, AgentConfig, AttentionAgent, CmaConfig, CmaEs, Genome, GenomeLayout, Incumbent, Scalar,
};
use attn_envs::ScoreStats;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::pool::{RolloutPlan, WorkerPool};
use crate::rollout::{rollout_episode, try_evaluate, RolloutOptions};
use crate::seeds::{derive_seed, episode_seeds, SeedDomain};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CMA_FILE: &str = "cma.ckpt";
pub const BEST_FILE: &str = "best.genome";
pub const STATE_FILE: &str = "state.json";

pub const DEFAULT_EVAL_EVERY: usize = 10;
pub const DEFAULT_EVAL_EPISODES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub agent: AgentConfig,
    pub cma: CmaConfig,
    pub plan: RolloutPlan,
    pub generations: u64,
    /// Evaluate the best-ever genome every this many generations; 0 never.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Stop once an evaluation mean reaches this.
    pub target_score: Option<f64>,
    pub checkpoint_every: usize,
    /// Root of every episode seed.
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl TrainRun {
    pub fn new(agent: AgentConfig, plan: RolloutPlan, out_dir: impl Into<PathBuf>) -> Self {
        TrainRun {
            agent,
            cma: CmaConfig::default(),
            plan,
            generations: 1000,
            eval_every: DEFAULT_EVAL_EVERY,
            eval_episodes: DEFAULT_EVAL_EPISODES,
            target_score: None,
            checkpoint_every: 1,
            seed: 0,
            workers: 1,
            out_dir: out_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.plan.validate()?;
        if self.eval_every > 0 && self.eval_episodes == 0 {
            return Err(HarnessError::Config("eval episodes must be positive when evaluating".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(HarnessError::Config("checkpoint interval must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(HarnessError::Config("worker count must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of the metrics log, fields in file order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub generation: u64,
    pub evaluations: u64,
    /// Best and mean fitness of this generation over finite values.
    pub best: Option<f64>,
    pub mean: Option<f64>,
    pub best_ever: Option<f64>,
    pub sigma: f64,
    pub nan_count: usize,
    pub eval_mean: Option<f64>,
    pub eval_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainState {
    schema: u32,
    layout_hash: u64,
    generation: u64,
    seed: u64,
    stopped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub generations: u64,
    pub best: Incumbent,
    pub last_eval: Option<ScoreStats>,
    pub stopped_early: bool,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Checkpoint(path.to_path_buf(), format!("metrics line {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).expect("metrics rows serialize");
        out.push(b'\n');
    }
    atomic_write(path, &out)
}

/// Writes through a temporary sibling and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let io = |e| HarnessError::io(&tmp, e);
    let mut f = File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// Reads the best genome saved by a training run.
pub fn load_best(dir: &Path) -> Result<(Genome, AgentConfig)> {
    let path = dir.join(BEST_FILE);
    let file = File::open(&path).map_err(|e| HarnessError::io(&path, e))?;
    Ok(read_genome(BufReader::new(file))?)
}

fn write_checkpoint(run: &TrainRun, cma: &CmaEs, state: &TrainState) -> Result<()> {
    let dir = &run.out_dir;
    let mut cma_bytes = Vec::new();
    cma.write_checkpoint(&mut cma_bytes)?;
    atomic_write(&dir.join(CMA_FILE), &cma_bytes)?;
    if let Ok(best) = cma.best() {
        let mut genome_bytes = Vec::new();
        write_genome(&mut genome_bytes, &Genome::new(best.solution.clone()), &run.agent)?;
        atomic_write(&dir.join(BEST_FILE), &genome_bytes)?;
    }
    // the state file commits the checkpoint
    let state_bytes = serde_json::to_vec_pretty(state).expect("state serializes");
    atomic_write(&dir.join(STATE_FILE), &state_bytes)
}

fn load_checkpoint(run: &TrainRun, layout: &GenomeLayout) -> Result<Option<(CmaEs, TrainState)>> {
    let dir = &run.out_dir;
    let state_path = dir.join(STATE_FILE);
    if !state_path.exists() {
        return Ok(None);
    }
    let bad = |msg: String| HarnessError::Checkpoint(dir.clone(), msg);
    let bytes = fs::read(&state_path).map_err(|e| HarnessError::io(&state_path, e))?;
    let state: TrainState = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
    if state.layout_hash != layout.hash() {
        return Err(HarnessError::LayoutMismatch {
            dir: dir.clone(),
            expected: layout.hash(),
            found: state.layout_hash,
        });
    }
    let cma_path = dir.join(CMA_FILE);
    let file = File::open(&cma_path).map_err(|e| HarnessError::io(&cma_path, e))?;
    let cma = CmaEs::read_checkpoint(BufReader::new(file))?;
    if cma.dim() != layout.total() {
        return Err(bad(format!("optimizer has {} dimensions, genome has {}", cma.dim(), layout.total())));
    }
    if cma.generation() != state.generation {
        return Err(bad(format!(
            "optimizer is at generation {}, state file says {}",
            cma.generation(),
            state.generation
        )));
    }
    let mut expected = run.cma.clone();
    expected.parent_count = Some(expected.parents());
    if *cma.config() != expected {
        return Err(bad(format!(
            "optimizer settings differ from this run: checkpoint {:?}, run {:?}",
            cma.config(),
            expected
        )));
    }
    if state.seed != run.seed {
        warn!("resuming with seed {} but the run started with {}", run.seed, state.seed);
    }
    Ok(Some((cma, state)))
}

/// Scores `genome` on `seeds`, one episode each, in parallel.
pub fn evaluate_on_pool<T: Scalar>(
    pool: &WorkerPool,
    genome: &Genome,
    config: &AgentConfig,
    seeds: &[u64],
    options: &RolloutOptions,
) -> Result<ScoreStats> {
    let agent = AttentionAgent::<T>::from_genome(genome, config)?;
    let scores: Vec<f64> = pool
        .run(seeds.len(), |i, env| Ok(rollout_episode(&agent, env, seeds[i], options)?.score))
        .into_iter()
        .map(|r| {
            r.unwrap_or_else(|e| {
                warn!("evaluation episode failed: {e}");
                f64::NAN
            })
        })
        .collect();
    Ok(ScoreStats::from_scores(scores))
}

/// Runs CMA-ES on the plan's environment, writing metrics and checkpoints to
/// `run.out_dir`. With `resume`, continues from the checkpoint found there.
pub fn train<T: Scalar>(run: &TrainRun, resume: bool) -> Result<TrainSummary> {
    run.validate()?;
    let layout = GenomeLayout::for_config(&run.agent);
    let dir = &run.out_dir;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let metrics_path = dir.join(METRICS_FILE);

    let (mut cma, mut stopped) = match resume.then(|| load_checkpoint(run, &layout)).transpose()?.flatten() {
        Some((cma, state)) => {
            info!("resuming from generation {}", state.generation);
            let rows = if metrics_path.exists() {
                read_metrics(&metrics_path)?
            } else {
                Vec::new()
            };
            let kept: Vec<_> = rows.into_iter().filter(|r| r.generation <= state.generation).collect();
            write_metrics(&metrics_path, &kept)?;
            (cma, state.stopped)
        }
        None => {
            if resume {
                info!("no checkpoint in {}; starting fresh", dir.display());
            }
            write_metrics(&metrics_path, &[])?;
            (CmaEs::new(vec![0.0; layout.total()], run.cma.clone())?, false)
        }
    };

    let pool = WorkerPool::new(run.workers, run.plan.env.clone())?;
    let options = RolloutOptions {
        max_steps: run.plan.max_steps,
        ..Default::default()
    };
    let eval_seeds = episode_seeds(run.seed, SeedDomain::Eval, run.eval_episodes);
    let metrics_file = OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| HarnessError::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(metrics_file);
    let mut last_eval = None;

    while !stopped && cma.generation() < run.generations {
        let generation = cma.generation() + 1;
        let candidates = cma.ask();
        let fitness: Vec<f64> = pool
            .run(candidates.len(), |i, env| {
                let seeds: Vec<u64> = (0..run.plan.rollouts as u64)
                    .map(|r| derive_seed(run.seed, SeedDomain::Train, generation, i as u64, r))
                    .collect();
                try_evaluate::<T, _>(&Genome::new(candidates[i].clone()), &run.agent, env, &seeds, &options)
            })
            .into_iter()
            .map(|r| {
                r.unwrap_or_else(|e| {
                    warn!("fitness evaluation failed: {e}");
                    f64::NAN
                })
            })
            .collect();
        let report = cma.tell(&candidates, &fitness)?;

        let finite_fitness: Vec<f64> = fitness.iter().copied().filter(|f| f.is_finite()).collect();
        let best = finite_fitness.iter().copied().fold(None, |m: Option<f64>, f| Some(m.map_or(f, |m| m.max(f))));
        let mean = (!finite_fitness.is_empty()).then(|| finite_fitness.iter().sum::<f64>() / finite_fitness.len() as f64);
        let mut row = MetricsRow {
            generation,
            evaluations: cma.evaluations(),
            best,
            mean,
            best_ever: cma.best().ok().and_then(|b| finite(b.fitness)),
            sigma: cma.sigma(),
            nan_count: report.nan_count,
            eval_mean: None,
            eval_std: None,
        };

        if run.eval_every > 0 && generation % run.eval_every as u64 == 0 {
            let incumbent = Genome::new(cma.best()?.solution.clone());
            let stats = evaluate_on_pool::<T>(&pool, &incumbent, &run.agent, &eval_seeds, &options)?;
            row.eval_mean = finite(stats.mean);
            row.eval_std = finite(stats.std);
            info!("generation {generation}: eval {:.2} ± {:.2}", stats.mean, stats.std);
            if run.target_score.is_some_and(|t| stats.mean >= t) {
                info!("eval mean reached the target; stopping");
                stopped = true;
            }
            last_eval = Some(stats);
        }

        serde_json::to_writer(&mut metrics, &row).expect("metrics rows serialize");
        metrics
            .write_all(b"\n")
            .and_then(|()| metrics.flush())
            .map_err(|e| HarnessError::io(&metrics_path, e))?;
        info!(
            "generation {generation}: best {:.2} mean {:.2} sigma {:.4}",
            best.unwrap_or(f64::NAN),
            mean.unwrap_or(f64::NAN),
            cma.sigma()
        );

        let last = stopped || generation >= run.generations;
        if last || generation % run.checkpoint_every as u64 == 0 {
            let state = TrainState {
                schema: 1,
                layout_hash: layout.hash(),
                generation,
                seed: run.seed,
                stopped,
            };
            write_checkpoint(run, &cma, &state)?;
        }
    }

    Ok(TrainSummary {
        generations: cma.generation(),
        best: cma.best()?.clone(),
        last_eval,
        stopped_early: stopped,
    })
}
