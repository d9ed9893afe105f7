use std::fs;
use std::path::Path;
use std::time::Duration;

use attn_bridge::RemoteEnv;
use attn_core::*;
use attn_envs::{dodge, run_episode, Dodge, EnvFamily, EnvModification, Environment};
use attn_harness::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> AgentConfig {
    AgentConfig {
        input_size: 16,
        window_size: 4,
        stride: 4,
        key_dim: 2,
        top_k: 3,
        hidden_size: 4,
        action: ActionSpec::Discrete { n: 3 },
    }
}

fn toy() -> AgentConfig {
    AgentConfig {
        input_size: 48,
        window_size: 5,
        stride: 4,
        key_dim: 4,
        top_k: 5,
        hidden_size: 8,
        action: ActionSpec::Discrete { n: 3 },
    }
}

fn random_genome(config: &AgentConfig, seed: u64) -> Genome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = GenomeLayout::for_config(config).total();
    Genome::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn zero_genome(config: &AgentConfig) -> Genome {
    Genome::zeros(GenomeLayout::for_config(config).total())
}

fn smoke_run(out: &Path, workers: usize, generations: u64) -> TrainRun {
    let plan = RolloutPlan {
        env: EnvSource::builtin("dodge"),
        rollouts: 2,
        max_steps: Some(60),
    };
    let mut run = TrainRun::new(tiny(), plan, out);
    run.cma = CmaConfig::new(8, 0.5, 11);
    run.generations = generations;
    run.eval_episodes = 3;
    run.seed = 5;
    run.workers = workers;
    run
}

#[test]
fn zero_genome_always_moves_left() {
    let config = toy();
    let agent = Agent64::from_genome(&zero_genome(&config), &config).unwrap();
    let mut env = Dodge::new();
    let a = rollout_episode(&agent, &mut env, 3, &RolloutOptions::traced()).unwrap();
    let b = rollout_episode(&agent, &mut env, 3, &RolloutOptions::default()).unwrap();
    assert_eq!(a.score, b.score);
    let trace = a.trace.unwrap();
    assert!(trace.steps.iter().all(|s| s.action == Action::Discrete(dodge::LEFT)));
    let left = run_episode(&mut env, 3, |_| Action::Discrete(dodge::LEFT)).unwrap();
    assert_eq!(a.score, left);
}

#[test]
fn trace_matches_rollout() {
    let config = toy();
    let agent = Agent32::from_genome(&random_genome(&config, 1), &config).unwrap();
    let mut env = Dodge::new();
    let n = config.grid().unwrap().num_patches();
    for seed in 0..3 {
        let rollout = rollout_episode(&agent, &mut env, seed, &RolloutOptions::traced()).unwrap();
        let trace = rollout.trace.unwrap();
        assert_eq!(trace.steps.len(), rollout.steps);
        assert!(trace.steps.iter().all(|s| s.selected.len() == 5 && s.selected.iter().all(|&i| i < n)));
        assert!(trace.steps.iter().all(|s| s.importance.len() == n));
        let sum: f64 = trace.steps.iter().map(|s| s.reward).sum();
        assert_eq!(sum, rollout.score);
        assert_eq!(trace.score, rollout.score);
        assert!(trace.steps.last().unwrap().done);
    }
}

#[test]
fn max_steps_caps_the_episode() {
    let config = tiny();
    let agent = Agent64::from_genome(&zero_genome(&config), &config).unwrap();
    let options = RolloutOptions {
        max_steps: Some(7),
        trace: true,
        keep_frames: true,
    };
    let rollout = rollout_episode(&agent, &mut Dodge::new(), 0, &options).unwrap();
    assert_eq!(rollout.steps, 7);
    let trace = rollout.trace.unwrap();
    assert!(trace.steps.iter().all(|s| s.frame.as_ref().is_some_and(|f| f.width() == 96)));
}

/// The same episode played by hand from the individual module operations.
fn scripted_score(genome: &Genome, config: &AgentConfig, env: &mut dyn Environment, seed: u64) -> f64 {
    let (attention, lstm) = decode::<f64>(genome, config).unwrap();
    let grid = config.grid().unwrap();
    let mut state = ControllerState::reset(config.hidden_size);
    let mut obs = env.reset(seed).unwrap();
    let mut score = 0.0;
    loop {
        let frame: Frame<f64> = obs.resize_nearest(config.input_size, config.input_size).to_frame();
        let x = patchify(&frame, &grid).unwrap();
        let a = attention_matrix(&x, &attention).unwrap();
        let importance = importance_vector(&a).unwrap();
        let selected = select_top_k(&importance, config.top_k).unwrap();
        let features: Vec<f64> = patch_centers::<f64>(&selected, &grid)
            .unwrap()
            .into_iter()
            .flatten()
            .collect();
        let (action, next) = step_controller(&features, &state, &lstm, &config.action).unwrap();
        state = next;
        let step = env.step(&action).unwrap();
        score += step.reward;
        obs = step.observation;
        if step.done {
            return score;
        }
    }
}

#[test]
fn rollout_equals_scripted_composition() {
    let config = toy();
    let mut env = Dodge::new();
    for g in 0..5 {
        let genome = random_genome(&config, 100 + g);
        let agent = Agent64::from_genome(&genome, &config).unwrap();
        let integrated = rollout_episode(&agent, &mut env, g, &RolloutOptions::default()).unwrap();
        assert_eq!(integrated.score, scripted_score(&genome, &config, &mut env, g), "genome {g}");
    }
}

#[test]
fn fitness_is_mean_of_rollouts_and_repeatable() {
    let config = toy();
    let genome = random_genome(&config, 7);
    let mut env = Dodge::new();
    let options = RolloutOptions::default();
    let agent = Agent32::from_genome(&genome, &config).unwrap();
    let single = rollout_episode(&agent, &mut env, 42, &options).unwrap().score;
    assert_eq!(evaluate_fitness::<f32, _>(&genome, &config, &mut env, &[42], &options), single);

    let seeds: Vec<u64> = (0..5).map(|r| derive_seed(1, SeedDomain::Train, 3, 4, r)).collect();
    let a = evaluate_fitness::<f32, _>(&genome, &config, &mut env, &seeds, &options);
    let b = evaluate_fitness::<f32, _>(&genome, &config, &mut Dodge::new(), &seeds, &options);
    assert_eq!(a.to_bits(), b.to_bits());
    let mean = seeds
        .iter()
        .map(|&s| rollout_episode(&agent, &mut env, s, &options).unwrap().score)
        .sum::<f64>()
        / 5.0;
    assert_eq!(a, mean);
    assert!(evaluate_fitness::<f32, _>(&genome, &config, &mut env, &[], &options).is_nan());
}

#[test]
fn broken_genome_gives_nan_fitness() {
    let config = tiny();
    let mut env = Dodge::new();
    let short = Genome::zeros(3);
    assert!(evaluate_fitness::<f64, _>(&short, &config, &mut env, &[1], &RolloutOptions::default()).is_nan());
}

#[test]
fn pool_results_do_not_depend_on_worker_count() {
    let config = tiny();
    let genomes: Vec<Genome> = (0..12).map(|i| random_genome(&config, i)).collect();
    let options = RolloutOptions::default();
    let fitness = |workers| {
        let pool = WorkerPool::new(workers, EnvSource::builtin("dodge")).unwrap();
        pool.run(genomes.len(), |i, env| {
            Ok(evaluate_fitness::<f64, _>(&genomes[i], &config, env, &[i as u64, 99], &options))
        })
        .into_iter()
        .map(|r| r.unwrap().to_bits())
        .collect::<Vec<_>>()
    };
    assert_eq!(fitness(1), fitness(3));
    assert!(WorkerPool::new(0, EnvSource::builtin("dodge")).is_err());
}

#[test]
fn smoke_training_writes_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let summary = train::<f32>(&smoke_run(dir.path(), 1, 3), false).unwrap();
    assert_eq!(summary.generations, 3);
    assert!(!summary.stopped_early);
    let rows = read_metrics(&dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(rows.iter().map(|r| r.generation).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(rows[2].evaluations, 24);
    assert!(rows.iter().all(|r| r.eval_mean.is_none()));
    assert_eq!(rows[2].best_ever, Some(summary.best.fitness));
    for file in ["cma.ckpt", "best.genome", "state.json"] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    let (best, config) = load_best(dir.path()).unwrap();
    assert_eq!(config, tiny());
    assert_eq!(best.values(), summary.best.solution.as_slice());
}

#[test]
fn metrics_are_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train::<f32>(&smoke_run(a.path(), 1, 3), false).unwrap();
    train::<f32>(&smoke_run(b.path(), 4, 3), false).unwrap();
    let read = |p: &Path| fs::read(p.join("metrics.jsonl")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(fs::read(a.path().join("cma.ckpt")).unwrap(), fs::read(b.path().join("cma.ckpt")).unwrap());
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let whole = tempfile::tempdir().unwrap();
    let parts = tempfile::tempdir().unwrap();
    train::<f32>(&smoke_run(whole.path(), 1, 5), false).unwrap();
    train::<f32>(&smoke_run(parts.path(), 1, 2), false).unwrap();
    let summary = train::<f32>(&smoke_run(parts.path(), 2, 5), true).unwrap();
    assert_eq!(summary.generations, 5);
    for file in ["metrics.jsonl", "cma.ckpt", "best.genome"] {
        assert_eq!(
            fs::read(whole.path().join(file)).unwrap(),
            fs::read(parts.path().join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn resume_drops_metrics_after_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = smoke_run(dir.path(), 1, 4);
    run.checkpoint_every = 2;
    train::<f32>(&run, false).unwrap();
    // pretend the process died after generation 3 was logged but before its
    // checkpoint: rewind the state to generation 2
    let reference = fs::read(dir.path().join("metrics.jsonl")).unwrap();
    let two = tempfile::tempdir().unwrap();
    let mut short = smoke_run(two.path(), 1, 2);
    short.checkpoint_every = 2;
    train::<f32>(&short, false).unwrap();
    let mut lines: Vec<String> = fs::read_to_string(dir.path().join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    lines.truncate(3);
    fs::write(two.path().join("metrics.jsonl"), lines.join("\n") + "\n").unwrap();
    train::<f32>(&run_in(&run, two.path()), true).unwrap();
    assert_eq!(fs::read(two.path().join("metrics.jsonl")).unwrap(), reference);
}

fn run_in(run: &TrainRun, dir: &Path) -> TrainRun {
    TrainRun {
        out_dir: dir.to_path_buf(),
        ..run.clone()
    }
}

#[test]
fn resume_refuses_other_layouts_and_settings() {
    let dir = tempfile::tempdir().unwrap();
    train::<f32>(&smoke_run(dir.path(), 1, 1), false).unwrap();

    let mut other = smoke_run(dir.path(), 1, 2);
    other.agent.hidden_size = 5;
    assert!(matches!(train::<f32>(&other, true), Err(HarnessError::LayoutMismatch { .. })));

    let mut other = smoke_run(dir.path(), 1, 2);
    other.cma.population_size = 10;
    assert!(matches!(train::<f32>(&other, true), Err(HarnessError::Checkpoint(..))));

    // a fresh start in the same directory is allowed
    assert!(train::<f32>(&other, false).is_ok());
}

#[test]
fn evaluation_rows_land_on_the_cadence() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = smoke_run(dir.path(), 1, 21);
    run.plan.rollouts = 1;
    run.plan.max_steps = Some(10);
    run.cma.population_size = 4;
    assert_eq!(run.eval_every, 10);
    assert_eq!(TrainRun::new(tiny(), run.plan.clone(), dir.path()).eval_episodes, 100);
    let summary = train::<f32>(&run, false).unwrap();
    let rows = read_metrics(&dir.path().join("metrics.jsonl")).unwrap();
    let evals: Vec<u64> = rows.iter().filter(|r| r.eval_mean.is_some()).map(|r| r.generation).collect();
    assert_eq!(evals, vec![10, 20]);
    assert!(rows.iter().filter(|r| r.eval_mean.is_some()).all(|r| r.eval_std.is_some()));
    assert_eq!(summary.last_eval.unwrap().scores.len(), 3);
}

#[test]
fn target_score_stops_training_early() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = smoke_run(dir.path(), 1, 50);
    run.eval_every = 2;
    run.target_score = Some(0.0);
    let summary = train::<f32>(&run, false).unwrap();
    assert!(summary.stopped_early);
    assert_eq!(summary.generations, 2);
    // a stopped run stays stopped on resume
    assert_eq!(train::<f32>(&run, true).unwrap().generations, 2);
}

#[test]
fn generalization_report_rows() {
    let config = tiny();
    let genome = zero_genome(&config);
    let base = EnvSource::builtin("dodge");
    let empty = generalization_suite::<f64>(&genome, &config, &base, &[], 3, 1, 1).unwrap();
    assert_eq!(empty.rows.len(), 1);
    assert_eq!(empty.rows[0].label, ORIGINAL_LABEL);

    let mods = EnvModification::defaults_for(EnvFamily::Dodge);
    let report = generalization_suite::<f64>(&genome, &config, &base, &mods, 3, 1, 2).unwrap();
    assert_eq!(report.rows.len(), 1 + mods.len());
    // the zero genome always moves left, so rendering cannot matter
    let original = report.rows[0].outcome.as_ref().unwrap();
    for (row, m) in report.rows[1..].iter().zip(&mods) {
        assert_eq!(row.label, m.name());
        assert_eq!(row.outcome.as_ref().unwrap(), original);
    }

    let mut tsv = Vec::new();
    report.write_tsv(&mut tsv).unwrap();
    let text = String::from_utf8(tsv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "setting\tmean\tstd\tepisodes\tstatus");
    assert!(lines[1].starts_with("original\t"));
    assert_eq!(lines.len(), 2 + mods.len());
}

#[test]
fn incompatible_modifications_become_error_rows() {
    let config = tiny();
    let mods = [EnvModification::vertical_bars(), EnvModification::HigherWalls];
    let report =
        generalization_suite::<f64>(&zero_genome(&config), &config, &EnvSource::builtin("dodge"), &mods, 2, 0, 1)
            .unwrap();
    assert!(report.row("vertical-bars").unwrap().outcome.is_err());
    assert!(report.row("higher-walls").unwrap().outcome.is_ok());
}

#[test]
fn zero_genome_importance_is_a_single_bin() {
    let config = tiny();
    let agent = Agent64::from_genome(&zero_genome(&config), &config).unwrap();
    let mut env = Dodge::new();
    let options = RolloutOptions {
        max_steps: Some(20),
        ..RolloutOptions::with_frames()
    };
    let traces: Vec<_> = (0..2)
        .map(|s| rollout_episode(&agent, &mut env, s, &options).unwrap().trace.unwrap())
        .collect();
    assert!(traces.iter().flat_map(|t| &t.steps).flat_map(|s| &s.importance).all(|&v| v == 1.0));

    let dir = tempfile::tempdir().unwrap();
    let analysis = AnalysisOptions {
        samples_per_range: 4,
        ..Default::default()
    };
    let report = importance_analysis(&traces, &config, &analysis, dir.path()).unwrap();
    assert_eq!(report.histogram.len(), 1);
    assert_eq!(report.histogram[0].count, report.values);
    assert_eq!(report.ranges.len(), 3);
    for range in &report.ranges {
        assert!(range.files.len() <= 4);
        for f in &range.files {
            let img = RgbImage::read_ppm(std::io::BufReader::new(fs::File::open(f).unwrap())).unwrap();
            assert_eq!(img.width(), config.window_size * analysis.patch_scale);
        }
    }
    let tsv = fs::read_to_string(dir.path().join("histogram.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 2);
}

#[test]
fn analysis_needs_traces_with_frames() {
    let config = tiny();
    let dir = tempfile::tempdir().unwrap();
    let empty: Vec<EpisodeTrace<f64>> = Vec::new();
    assert!(matches!(
        importance_analysis(&empty, &config, &AnalysisOptions::default(), dir.path()),
        Err(HarnessError::EmptyReport)
    ));
    let agent = Agent64::from_genome(&zero_genome(&config), &config).unwrap();
    let options = RolloutOptions {
        max_steps: Some(3),
        ..RolloutOptions::traced()
    };
    let trace = rollout_episode(&agent, &mut Dodge::new(), 0, &options).unwrap().trace.unwrap();
    assert!(matches!(
        importance_analysis(&[trace], &config, &AnalysisOptions::default(), dir.path()),
        Err(HarnessError::MissingFrames)
    ));
}

#[test]
fn bridged_environment_is_indistinguishable() {
    let config = toy();
    let genome = random_genome(&config, 21);
    let agent = Agent32::from_genome(&genome, &config).unwrap();
    let mut remote = RemoteEnv::loopback(Dodge::new(), Duration::from_secs(30)).unwrap();
    let mut local = Dodge::new();
    for seed in 0..3 {
        let a = rollout_episode(&agent, &mut local, seed, &RolloutOptions::traced()).unwrap();
        let b = rollout_episode(&agent, &mut remote, seed, &RolloutOptions::traced()).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(remote.spec().name, local.spec().name);
}

#[test]
fn overlay_marks_selected_windows() {
    let config = toy();
    let agent = Agent64::from_genome(&zero_genome(&config), &config).unwrap();
    let rollout = rollout_episode(&agent, &mut Dodge::new(), 0, &RolloutOptions::with_frames()).unwrap();
    let step = &rollout.trace.unwrap().steps[0];
    // all importances tie, so the lowest indices win
    assert_eq!(step.selected, vec![0, 1, 2, 3, 4]);
    let frame = step.frame.as_ref().unwrap();
    let grid = config.grid().unwrap();
    let overlay = overlay_attention(frame, &grid, &step.selected, &step.importance);
    let rects = patch_rects(&grid, &step.selected, &step.importance, 96, 96);
    assert!(rects.iter().all(|r| r.opacity == rects[0].opacity));
    for y in 0..96 {
        for x in 0..96 {
            let inside = rects.iter().any(|r| (r.x0..r.x1).contains(&x) && (r.y0..r.y1).contains(&y));
            let changed = overlay.pixel(x, y) != frame.pixel(x, y);
            if changed {
                assert!(inside, "pixel ({x}, {y}) changed outside the selected windows");
            }
            if inside {
                assert!(overlay.pixel(x, y).iter().zip(frame.pixel(x, y)).all(|(&o, f)| o >= f));
            }
        }
    }
}
