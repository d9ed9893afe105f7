//! Rollouts, parallel fitness evaluation, the CMA-ES training loop,
//! generalization tests, attention overlays and importance analysis.

pub mod analysis;
pub mod error;
pub mod eval;
pub mod pool;
pub mod rollout;
pub mod seeds;
pub mod train;
pub mod viz;

pub use analysis::{histogram, importance_analysis, importance_analysis_with, AnalysisOptions, HistogramBin, ImportanceReport, RangeExemplars};
pub use error::{HarnessError, Result};
pub use eval::{evaluate_genome, generalization_suite, GeneralizationReport, GeneralizationRow, ORIGINAL_LABEL};
pub use pool::{EnvSource, RolloutPlan, WorkerPool};
pub use rollout::{evaluate_fitness, preprocess, rollout_episode, EpisodeTrace, Rollout, RolloutOptions, TraceStep};
pub use seeds::{derive_seed, episode_seeds, SeedDomain};
pub use train::{atomic_write, load_best, read_metrics, train, MetricsRow, TrainRun, TrainSummary};
pub use viz::{overlay_attention, patch_rects, rank_opacity, PatchRect};
