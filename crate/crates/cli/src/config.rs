//! The run configuration file.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use attn_bridge::Endpoint;
use attn_core::{ActionSpec, AgentConfig, CmaConfig};
use attn_envs::{EnvFamily, EnvModification};
use attn_harness::{AnalysisOptions, EnvSource, RolloutPlan, TrainRun};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub rollout: RolloutSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub generalization: GeneralizationSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub input_size: usize,
    pub window_size: usize,
    pub stride: usize,
    pub key_dim: usize,
    pub top_k: usize,
    pub hidden_size: usize,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            input_size: AgentConfig::DEFAULT_INPUT_SIZE,
            window_size: AgentConfig::DEFAULT_WINDOW_SIZE,
            stride: AgentConfig::DEFAULT_STRIDE,
            key_dim: AgentConfig::DEFAULT_KEY_DIM,
            top_k: AgentConfig::DEFAULT_TOP_K,
            hidden_size: AgentConfig::DEFAULT_HIDDEN_SIZE,
        }
    }
}

impl AgentSection {
    pub fn to_config(&self, action: ActionSpec) -> AgentConfig {
        AgentConfig {
            input_size: self.input_size,
            window_size: self.window_size,
            stride: self.stride,
            key_dim: self.key_dim,
            top_k: self.top_k,
            hidden_size: self.hidden_size,
            action,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub population_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent_count: Option<usize>,
    pub initial_sigma: f64,
    pub generations: u64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            population_size: CmaConfig::DEFAULT_POPULATION,
            parent_count: None,
            initial_sigma: CmaConfig::DEFAULT_SIGMA,
            generations: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    /// Built-in environment name.
    pub name: String,
    pub modifications: Vec<String>,
    /// Adapter endpoint, `tcp:HOST:PORT` or `cmd:PROGRAM ARGS`; replaces `name`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bridge: Option<String>,
    pub timeout_secs: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            name: "dodge".into(),
            modifications: Vec::new(),
            bridge: None,
            timeout_secs: attn_bridge::DEFAULT_TIMEOUT.as_secs_f64(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutSection {
    /// Episodes per fitness value; 16 for lane-racer and 5 otherwise when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rollouts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub every: usize,
    pub episodes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_score: Option<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            every: attn_harness::train::DEFAULT_EVAL_EVERY,
            episodes: attn_harness::train::DEFAULT_EVAL_EPISODES,
            target_score: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub checkpoint_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs/default"),
            checkpoint_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneralizationSection {
    /// Modification names; every modification for the env family when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modifications: Option<Vec<String>>,
    pub episodes: usize,
}

impl Default for GeneralizationSection {
    fn default() -> Self {
        GeneralizationSection {
            modifications: None,
            episodes: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub episodes: usize,
    pub top_fraction: f64,
    pub bins: usize,
    pub ranges: Vec<[f64; 2]>,
    pub samples_per_range: usize,
    pub patch_scale: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let o = AnalysisOptions::default();
        AnalysisSection {
            episodes: attn_harness::analysis::DEFAULT_ANALYSIS_EPISODES,
            top_fraction: o.top_fraction,
            bins: o.bins,
            ranges: o.ranges.iter().map(|&(a, b)| [a, b]).collect(),
            samples_per_range: o.samples_per_range,
            patch_scale: o.patch_scale,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            workers: 1,
            precision: Precision::default(),
            agent: AgentSection::default(),
            optimizer: OptimizerSection::default(),
            env: EnvSection::default(),
            rollout: RolloutSection::default(),
            eval: EvalSection::default(),
            output: OutputSection::default(),
            generalization: GeneralizationSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    /// The file could not be read at all.
    Missing(PathBuf, std::io::Error),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Missing(p, e) => write!(f, "cannot read config {}: {e}", p.display()),
            ConfigError::Invalid(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        config.modifications()?;
        config.generalization_modifications()?;
        if let Some(b) = &config.env.bridge {
            b.parse::<Endpoint>().map_err(|e| ConfigError::Invalid(format!("env.bridge: {e}")))?;
        }
        if !(config.env.timeout_secs.is_finite() && config.env.timeout_secs > 0.0) {
            return Err(ConfigError::Invalid("env.timeout_secs must be positive".into()));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Missing(path.to_path_buf(), e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            ConfigError::Invalid(msg) => ConfigError::Invalid(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    fn parse_mods(names: &[String], key: &str) -> Result<Vec<EnvModification>, ConfigError> {
        names
            .iter()
            .map(|n| n.parse().map_err(|e| ConfigError::Invalid(format!("{key}: {e}"))))
            .collect()
    }

    pub fn modifications(&self) -> Result<Vec<EnvModification>, ConfigError> {
        Self::parse_mods(&self.env.modifications, "env.modifications")
    }

    /// The generalization battery; defaults to every modification of the
    /// environment's family.
    pub fn generalization_modifications(&self) -> Result<Vec<EnvModification>, ConfigError> {
        match &self.generalization.modifications {
            Some(names) => Self::parse_mods(names, "generalization.modifications"),
            None => Ok(self.family().map(EnvModification::defaults_for).unwrap_or_default()),
        }
    }

    pub fn family(&self) -> Option<EnvFamily> {
        match self.env.name.as_str() {
            "lane-racer" => Some(EnvFamily::LaneRacer),
            "dodge" => Some(EnvFamily::Dodge),
            _ => None,
        }
    }

    pub fn env_source(&self) -> Result<EnvSource, ConfigError> {
        match &self.env.bridge {
            Some(endpoint) => Ok(EnvSource::Bridge {
                endpoint: endpoint.parse().map_err(|e| ConfigError::Invalid(format!("env.bridge: {e}")))?,
                timeout: Duration::from_secs_f64(self.env.timeout_secs),
            }),
            None => Ok(EnvSource::Builtin {
                name: self.env.name.clone(),
                modifications: self.modifications()?,
            }),
        }
    }

    pub fn rollouts(&self) -> usize {
        self.rollout.rollouts.unwrap_or(match self.family() {
            Some(EnvFamily::LaneRacer) => 16,
            _ => 5,
        })
    }

    pub fn plan(&self) -> Result<RolloutPlan, ConfigError> {
        Ok(RolloutPlan {
            env: self.env_source()?,
            rollouts: self.rollouts(),
            max_steps: self.rollout.max_steps,
        })
    }

    pub fn cma(&self) -> CmaConfig {
        CmaConfig {
            population_size: self.optimizer.population_size,
            parent_count: self.optimizer.parent_count,
            initial_sigma: self.optimizer.initial_sigma,
            seed: self.seed,
        }
    }

    pub fn train_run(&self, action: ActionSpec) -> Result<TrainRun, ConfigError> {
        Ok(TrainRun {
            agent: self.agent.to_config(action),
            cma: self.cma(),
            plan: self.plan()?,
            generations: self.optimizer.generations,
            eval_every: self.eval.every,
            eval_episodes: self.eval.episodes,
            target_score: self.eval.target_score,
            checkpoint_every: self.output.checkpoint_every,
            seed: self.seed,
            workers: self.workers,
            out_dir: self.output.dir.clone(),
        })
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        let a = &self.analysis;
        AnalysisOptions {
            top_fraction: a.top_fraction,
            bins: a.bins,
            ranges: a.ranges.iter().map(|r| (r[0], r[1])).collect(),
            samples_per_range: a.samples_per_range,
            seed: self.seed,
            patch_scale: a.patch_scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_standard_defaults() {
        let c = RunConfig::parse("schema_version = 1\n").unwrap();
        assert_eq!(c, RunConfig::default());
        let agent = c.agent.to_config(ActionSpec::Discrete { n: 3 });
        assert_eq!(agent, AgentConfig::standard(ActionSpec::Discrete { n: 3 }));
        assert_eq!((c.optimizer.population_size, c.optimizer.initial_sigma), (256, 0.1));
        assert_eq!((c.eval.every, c.eval.episodes), (10, 100));
        assert_eq!(c.rollouts(), 5);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse("schema_version = 1\n[agent]\ntop_kk = 3\n").unwrap_err();
        assert!(err.to_string().contains("top_kk"), "{err}");
        let err = RunConfig::parse("schema_version = 1\nworkerz = 3\n").unwrap_err();
        assert!(err.to_string().contains("workerz"), "{err}");
    }

    #[test]
    fn schema_version_is_checked() {
        assert!(RunConfig::parse("").is_err());
        assert!(RunConfig::parse("schema_version = 2").is_err());
    }

    #[test]
    fn bad_values_are_rejected() {
        let err = RunConfig::parse("schema_version = 1\n[env]\nmodifications = [\"sparkles\"]\n").unwrap_err();
        assert!(err.to_string().contains("env.modifications"), "{err}");
        assert!(RunConfig::parse("schema_version = 1\n[env]\nbridge = \"ftp:x\"\n").is_err());
    }

    #[test]
    fn generalization_defaults_to_the_family_battery() {
        let mut c = RunConfig::default();
        assert_eq!(c.generalization_modifications().unwrap().len(), 3);
        c.env.name = "lane-racer".into();
        assert_eq!(c.generalization_modifications().unwrap().len(), 3);
        assert_eq!(c.rollouts(), 16);
    }
}
