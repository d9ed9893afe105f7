use std::fmt;
use std::fs;
use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use attn_bridge::{serve, serve_listener};
use attn_core::{read_genome, AgentConfig, AttentionAgent, Genome, GenomeLayout, Scalar};
use attn_envs::{apply_modification, random_baseline, BuiltinEnv, EnvModification, Environment};
use attn_harness::{
    episode_seeds, evaluate_genome, generalization_suite, importance_analysis_with, overlay_attention,
    rollout_episode, train, EpisodeTrace, HarnessError, RolloutOptions, SeedDomain, TraceStep,
    WorkerPool,
};
use clap::{Parser, Subcommand};
use log::info;

use crate::config::{ConfigError, Precision, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "attn-agent", version, about = "Train and inspect self-attention agents on pixel environments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Genome file, or a training output directory holding best.genome.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Rollout worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overrides the configured run seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Drive an external adapter instead of a built-in env: tcp:HOST:PORT or "cmd:PROGRAM ARGS".
    #[arg(long, global = true)]
    pub bridge: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run CMA-ES training as configured.
    Train {
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on held-out episodes and print "mean ± std".
    Eval {
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Play one episode and write an attention overlay per step.
    Viz {
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Score a checkpoint on the original env and each rendering modification.
    Gen {
        #[arg(long)]
        env: Option<String>,
        /// Modification name; repeatable. Defaults to the env family's battery.
        #[arg(long = "mod")]
        mods: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Importance histogram and exemplar patches over test episodes.
    Analyze {
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Serve a built-in env over the bridge protocol (stdio unless --listen).
    Serve {
        #[arg(long)]
        env: String,
        #[arg(long = "mod")]
        mods: Vec<String>,
        /// TCP address to listen on, e.g. 127.0.0.1:7000.
        #[arg(long)]
        listen: Option<String>,
        /// Stop after this many TCP sessions.
        #[arg(long)]
        sessions: Option<usize>,
    },
    /// Random-policy score of an env.
    Baseline {
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Print a configuration file with every default filled in.
    Init,
}

/// Bad invocation or unusable input file; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() || err.downcast_ref::<ConfigError>().is_some() {
        2
    } else {
        1
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(cli: &Cli, env: Option<&str>) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(name) = env {
        config.env.name = name.to_string();
        config.env.bridge = None;
    }
    if let Some(bridge) = &cli.bridge {
        bridge.parse::<attn_bridge::Endpoint>().map_err(|e| usage(format!("--bridge: {e}")))?;
        config.env.bridge = Some(bridge.clone());
    }
    if config.workers == 0 {
        bail!(usage("--workers must be at least 1"));
    }
    Ok(config)
}

fn load_checkpoint(cli: &Cli) -> Result<(Genome, AgentConfig)> {
    let path = cli.checkpoint.as_ref().ok_or_else(|| usage("this command needs --checkpoint"))?;
    let file = if path.is_dir() {
        path.join(attn_harness::train::BEST_FILE)
    } else {
        path.clone()
    };
    let f = fs::File::open(&file).map_err(|e| usage(format!("cannot read checkpoint {}: {e}", file.display())))?;
    read_genome(BufReader::new(f)).with_context(|| format!("reading checkpoint {}", file.display()))
}

/// Checks the checkpoint against the environment and, when a config file was
/// given, against its agent section.
fn check_compatible(cli: &Cli, config: &RunConfig, agent: &AgentConfig, env: &dyn Environment) -> Result<()> {
    if cli.config.is_some() {
        let expected = GenomeLayout::for_config(&config.agent.to_config(agent.action.clone()));
        let found = GenomeLayout::for_config(agent);
        if expected.hash() != found.hash() {
            bail!(
                "checkpoint layout {:016x} does not match the configured agent {:016x}",
                found.hash(),
                expected.hash()
            );
        }
    }
    if env.spec().action != agent.action {
        bail!(
            "checkpoint acts in {:?} but {} expects {:?}",
            agent.action,
            env.spec().name,
            env.spec().action
        );
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

macro_rules! with_precision {
    ($p:expr, $f:ident($($arg:expr),*)) => {
        match $p {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train { resume } => cmd_train(&cli, *resume),
        Command::Eval { env, episodes } => cmd_eval(&cli, env.as_deref(), *episodes),
        Command::Viz { env, max_steps } => cmd_viz(&cli, env.as_deref(), *max_steps),
        Command::Gen { env, mods, episodes } => cmd_gen(&cli, env.as_deref(), mods, *episodes),
        Command::Analyze { env, episodes } => cmd_analyze(&cli, env.as_deref(), *episodes),
        Command::Serve {
            env,
            mods,
            listen,
            sessions,
        } => cmd_serve(env, mods, listen.as_deref(), *sessions),
        Command::Baseline { env, episodes } => cmd_baseline(&cli, env.as_deref(), *episodes),
        Command::Init => {
            print!("{}", RunConfig::default().to_toml());
            Ok(())
        }
    }
}

fn cmd_train(cli: &Cli, resume: bool) -> Result<()> {
    if cli.config.is_none() {
        bail!(usage("train needs --config"));
    }
    let config = load_config(cli, None)?;
    let source = config.env_source()?;
    let action = source.make()?.spec().action.clone();
    let run = config.train_run(action)?;
    create_dir(&run.out_dir)?;
    write_file(&run.out_dir.join("config.toml"), config.to_toml().as_bytes())?;
    info!("training on {source} into {}", run.out_dir.display());
    let summary = with_precision!(config.precision, train(&run, resume))?;
    println!(
        "generations {} best fitness {:.2} (generation {})",
        summary.generations, summary.best.fitness, summary.best.generation
    );
    if let Some(eval) = summary.last_eval {
        println!("last eval {}", mean_std(eval.mean, eval.std));
    }
    if summary.stopped_early {
        println!("stopped early: target score reached");
    }
    Ok(())
}

/// The printed score grammar: `MEAN ± STD` with two decimals.
pub fn mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

fn cmd_eval(cli: &Cli, env: Option<&str>, episodes: Option<usize>) -> Result<()> {
    let config = load_config(cli, env)?;
    let (genome, agent) = load_checkpoint(cli)?;
    let source = config.env_source()?;
    check_compatible(cli, &config, &agent, source.make()?.as_ref())?;
    let episodes = episodes.unwrap_or(config.eval.episodes);
    if episodes == 0 {
        bail!(usage("--episodes must be at least 1"));
    }
    let options = RolloutOptions {
        max_steps: config.rollout.max_steps,
        ..Default::default()
    };
    let stats = with_precision!(
        config.precision,
        evaluate_genome(&genome, &agent, &source, episodes, config.seed, config.workers, &options)
    )?;
    let line = mean_std(stats.mean, stats.std);
    println!("{line}");
    if let Some(out) = &cli.out {
        create_dir(out)?;
        let seeds = episode_seeds(config.seed, SeedDomain::Eval, episodes);
        let mut tsv = String::from("episode\tseed\tscore\n");
        for (i, (seed, score)) in seeds.iter().zip(&stats.scores).enumerate() {
            tsv.push_str(&format!("{i}\t{seed}\t{score}\n"));
        }
        write_file(&out.join("eval.tsv"), tsv.as_bytes())?;
        write_file(&out.join("eval.txt"), format!("{line}\n").as_bytes())?;
    }
    Ok(())
}

fn trace_line<T: Scalar>(t: usize, step: &TraceStep<T>) -> String {
    let selected: Vec<String> = step.selected.iter().map(usize::to_string).collect();
    format!("{t}\t{}\t{:?}\t{}\t{:?}\n", selected.join(","), step.reward, step.done, step.action)
}

fn cmd_viz(cli: &Cli, env: Option<&str>, max_steps: Option<usize>) -> Result<()> {
    let config = load_config(cli, env)?;
    let (genome, agent) = load_checkpoint(cli)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("viz"));
    with_precision!(config.precision, viz(cli, &config, &genome, &agent, &out, max_steps))
}

fn viz<T: Scalar>(
    cli: &Cli,
    config: &RunConfig,
    genome: &Genome,
    agent_config: &AgentConfig,
    out: &Path,
    max_steps: Option<usize>,
) -> Result<()> {
    let mut env = config.env_source()?.make()?;
    check_compatible(cli, config, agent_config, env.as_ref())?;
    let agent = AttentionAgent::<T>::from_genome(genome, agent_config)?;
    let options = RolloutOptions {
        max_steps: max_steps.or(config.rollout.max_steps),
        ..RolloutOptions::with_frames()
    };
    let rollout = rollout_episode(&agent, env.as_mut(), config.seed, &options)?;
    let trace = rollout.trace.expect("traced rollout");
    create_dir(out)?;
    let grid = agent_config.grid()?;
    let mut tsv = String::from("step\tselected\treward\tdone\taction\n");
    for (t, step) in trace.steps.iter().enumerate() {
        let frame = step.frame.as_ref().expect("frames kept");
        let overlay = overlay_attention(frame, &grid, &step.selected, &step.importance);
        write_file(&out.join(format!("frame_{t:05}.ppm")), &overlay.to_ppm_bytes())?;
        tsv.push_str(&trace_line(t, step));
    }
    write_file(&out.join("trace.tsv"), tsv.as_bytes())?;
    println!(
        "{} frames written to {}, score {}",
        trace.steps.len(),
        out.display(),
        rollout.score
    );
    Ok(())
}

fn cmd_gen(cli: &Cli, env: Option<&str>, mods: &[String], episodes: Option<usize>) -> Result<()> {
    let config = load_config(cli, env)?;
    let (genome, agent) = load_checkpoint(cli)?;
    let source = config.env_source()?;
    check_compatible(cli, &config, &agent, source.make()?.as_ref())?;
    let mods: Vec<EnvModification> = if mods.is_empty() {
        config.generalization_modifications()?
    } else {
        mods.iter()
            .map(|m| m.parse().map_err(|e| usage(format!("--mod: {e}"))))
            .collect::<Result<_>>()?
    };
    let episodes = episodes.unwrap_or(config.generalization.episodes);
    if episodes == 0 {
        bail!(usage("--episodes must be at least 1"));
    }
    let report = with_precision!(
        config.precision,
        generalization_suite(&genome, &agent, &source, &mods, episodes, config.seed, config.workers)
    )?;
    let mut tsv = Vec::new();
    report.write_tsv(&mut tsv)?;
    io::stdout().write_all(&tsv)?;
    if let Some(out) = &cli.out {
        create_dir(out)?;
        write_file(&out.join("generalization.tsv"), &tsv)?;
    }
    Ok(())
}

fn cmd_analyze(cli: &Cli, env: Option<&str>, episodes: Option<usize>) -> Result<()> {
    let config = load_config(cli, env)?;
    let (genome, agent) = load_checkpoint(cli)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("analysis"));
    let episodes = episodes.unwrap_or(config.analysis.episodes);
    if episodes == 0 {
        bail!(usage("--episodes must be at least 1"));
    }
    with_precision!(config.precision, analyze(cli, &config, &genome, &agent, &out, episodes))
}

fn analyze<T: Scalar>(
    cli: &Cli,
    config: &RunConfig,
    genome: &Genome,
    agent_config: &AgentConfig,
    out: &Path,
    episodes: usize,
) -> Result<()> {
    let source = config.env_source()?;
    check_compatible(cli, config, agent_config, source.make()?.as_ref())?;
    let agent = AttentionAgent::<T>::from_genome(genome, agent_config)?;
    let seeds = episode_seeds(config.seed, SeedDomain::Analysis, episodes);
    let pool = WorkerPool::new(config.workers, source)?;
    let traced = RolloutOptions {
        max_steps: config.rollout.max_steps,
        ..RolloutOptions::traced()
    };
    let traces: Vec<EpisodeTrace<T>> = pool
        .run(episodes, |i, env| {
            Ok(rollout_episode(&agent, env, seeds[i], &traced)?.trace.expect("traced rollout"))
        })
        .into_iter()
        .collect::<Result<_, HarnessError>>()?;

    // frames are not kept on the first pass; replay the episodes that
    // supply exemplars
    let with_frames = RolloutOptions {
        keep_frames: true,
        ..traced.clone()
    };
    let mut env = pool.source().make()?;
    let report = importance_analysis_with(&traces, agent_config, &config.analysis_options(), out, |t, steps| {
        let replay = rollout_episode(&agent, env.as_mut(), seeds[t], &with_frames)?;
        let mut trace = replay.trace.expect("traced rollout");
        Ok(steps
            .iter()
            .filter_map(|&s| trace.steps.get_mut(s).and_then(|st| st.frame.take()))
            .collect())
    })?;
    println!(
        "{} importance values from {} episodes; top {}% threshold {:.4}",
        report.values,
        episodes,
        config.analysis.top_fraction * 100.0,
        report.threshold
    );
    for r in &report.ranges {
        println!(
            "quantiles {:.2}-{:.2} (importance {:.4}-{:.4}): {} exemplars of {} candidates",
            r.quantiles.0,
            r.quantiles.1,
            r.bounds.0,
            r.bounds.1,
            r.files.len(),
            r.candidates
        );
    }
    Ok(())
}

fn make_builtin(name: &str, mods: &[EnvModification]) -> Result<BuiltinEnv> {
    let mut env = BuiltinEnv::named(name).map_err(|e| usage(e.to_string()))?;
    for m in mods {
        env = apply_modification(env, m.clone()).map_err(|e| usage(e.to_string()))?;
    }
    Ok(env)
}

fn cmd_serve(name: &str, mods: &[String], listen: Option<&str>, sessions: Option<usize>) -> Result<()> {
    let mods: Vec<EnvModification> = mods
        .iter()
        .map(|m| m.parse().map_err(|e| usage(format!("--mod: {e}"))))
        .collect::<Result<_>>()?;
    let mut env = make_builtin(name, &mods)?;
    match listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("cannot listen on {addr}"))?;
            info!("serving {name} on {}", listener.local_addr()?);
            serve_listener(&listener, || Ok(make_builtin(name, &mods).expect("checked above")), sessions)?;
        }
        None => serve(&mut env, io::stdin().lock(), io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_baseline(cli: &Cli, env: Option<&str>, episodes: usize) -> Result<()> {
    let config = load_config(cli, env)?;
    if episodes == 0 {
        bail!(usage("--episodes must be at least 1"));
    }
    let mut env = config.env_source()?.make()?;
    let stats = random_baseline(&mut env, episodes, config.seed)?;
    println!("{}", mean_std(stats.mean, stats.std));
    Ok(())
}
