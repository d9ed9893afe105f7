use std::io::Write;

use attn_core::{AgentConfig, Genome, Scalar};
use attn_envs::{EnvModification, ScoreStats};
use log::warn;

use crate::error::{HarnessError, Result};
use crate::pool::{EnvSource, WorkerPool};
use crate::rollout::RolloutOptions;
use crate::seeds::{episode_seeds, SeedDomain};
use crate::train::evaluate_on_pool;

/// Mean ± std of `genome` over `episodes` held-out episodes.
pub fn evaluate_genome<T: Scalar>(
    genome: &Genome,
    config: &AgentConfig,
    source: &EnvSource,
    episodes: usize,
    seed: u64,
    workers: usize,
    options: &RolloutOptions,
) -> Result<ScoreStats> {
    if episodes == 0 {
        return Err(HarnessError::Config("evaluation needs at least one episode".into()));
    }
    let pool = WorkerPool::new(workers, source.clone())?;
    evaluate_on_pool::<T>(&pool, genome, config, &episode_seeds(seed, SeedDomain::Eval, episodes), options)
}

/// One row of a generalization report.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizationRow {
    /// `original` or the modification name.
    pub label: String,
    pub outcome: std::result::Result<ScoreStats, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizationReport {
    pub env: String,
    pub episodes: usize,
    pub rows: Vec<GeneralizationRow>,
}

pub const ORIGINAL_LABEL: &str = "original";

impl GeneralizationReport {
    pub fn row(&self, label: &str) -> Option<&GeneralizationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Tab-separated: `setting mean std episodes status`. Failed rows carry
    /// empty numbers and the error text as status.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "setting\tmean\tstd\tepisodes\tstatus")?;
        for row in &self.rows {
            match &row.outcome {
                Ok(s) => writeln!(w, "{}\t{:.4}\t{:.4}\t{}\tok", row.label, s.mean, s.std, s.scores.len())?,
                Err(e) => writeln!(w, "{}\t\t\t0\t{}", row.label, e.replace(['\t', '\n'], " "))?,
            }
        }
        Ok(())
    }
}

/// Scores `genome` on the unmodified source and then on each modification,
/// always with the same evaluation seeds.
pub fn generalization_suite<T: Scalar>(
    genome: &Genome,
    config: &AgentConfig,
    base: &EnvSource,
    modifications: &[EnvModification],
    episodes: usize,
    seed: u64,
    workers: usize,
) -> Result<GeneralizationReport> {
    let options = RolloutOptions::default();
    let original = evaluate_genome::<T>(genome, config, base, episodes, seed, workers, &options)?;
    let mut rows = vec![GeneralizationRow {
        label: ORIGINAL_LABEL.to_string(),
        outcome: Ok(original),
    }];
    for m in modifications {
        let outcome = base
            .with_modification(m.clone())
            .and_then(|source| evaluate_genome::<T>(genome, config, &source, episodes, seed, workers, &options))
            .map_err(|e| {
                warn!("{m}: {e}");
                e.to_string()
            });
        rows.push(GeneralizationRow {
            label: m.name().to_string(),
            outcome,
        });
    }
    Ok(GeneralizationReport {
        env: base.to_string(),
        episodes,
        rows,
    })
}
