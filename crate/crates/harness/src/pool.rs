use std::fmt;
use std::sync::Mutex;
use std::time::Duration;

use attn_bridge::{Endpoint, RemoteEnv};
use attn_envs::{apply_modification, BuiltinEnv, EnvError, EnvModification, Environment};
use log::warn;
use rayon::prelude::*;

use crate::error::{HarnessError, Result};

/// Where rollout environments come from.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvSource {
    Builtin {
        name: String,
        modifications: Vec<EnvModification>,
    },
    Bridge {
        endpoint: Endpoint,
        timeout: Duration,
    },
}

impl EnvSource {
    pub fn builtin(name: &str) -> Self {
        EnvSource::Builtin {
            name: name.to_string(),
            modifications: Vec::new(),
        }
    }

    /// Same source with one more rendering modification. Only built-in
    /// environments can be modified here.
    pub fn with_modification(&self, m: EnvModification) -> Result<EnvSource> {
        match self {
            EnvSource::Builtin { name, modifications } => {
                let mut modifications = modifications.clone();
                modifications.push(m);
                let source = EnvSource::Builtin {
                    name: name.clone(),
                    modifications,
                };
                // surface incompatible pairs now rather than inside a worker
                source.make()?;
                Ok(source)
            }
            EnvSource::Bridge { .. } => Err(HarnessError::Config(
                "modifications can only be applied to built-in environments".into(),
            )),
        }
    }

    pub fn make(&self) -> Result<Box<dyn Environment>> {
        match self {
            EnvSource::Builtin { name, modifications } => {
                let mut env = BuiltinEnv::named(name)?;
                for m in modifications {
                    env = apply_modification(env, m.clone())?;
                }
                Ok(Box::new(env))
            }
            EnvSource::Bridge { endpoint, timeout } => Ok(Box::new(RemoteEnv::connect(endpoint, *timeout)?)),
        }
    }
}

impl fmt::Display for EnvSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvSource::Builtin { name, modifications } => {
                f.write_str(name)?;
                for m in modifications {
                    write!(f, "+{m}")?;
                }
                Ok(())
            }
            EnvSource::Bridge { endpoint, .. } => write!(f, "{endpoint}"),
        }
    }
}

/// Rollouts per fitness evaluation and where they run.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutPlan {
    pub env: EnvSource,
    /// R, episodes averaged into one fitness value.
    pub rollouts: usize,
    pub max_steps: Option<usize>,
}

impl RolloutPlan {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts == 0 {
            return Err(HarnessError::Config("rollouts per fitness must be at least 1".into()));
        }
        if self.max_steps == Some(0) {
            return Err(HarnessError::Config("max steps must be positive".into()));
        }
        Ok(())
    }
}

type Slot = Mutex<Option<Box<dyn Environment>>>;

/// Fixed set of worker threads, each owning one lazily created environment.
pub struct WorkerPool {
    pool: rayon::ThreadPool,
    source: EnvSource,
    envs: Vec<Slot>,
}

impl WorkerPool {
    pub fn new(workers: usize, source: EnvSource) -> Result<Self> {
        if workers == 0 {
            return Err(HarnessError::Config("worker count must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("rollout-{i}"))
            .build()
            .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
        Ok(WorkerPool {
            pool,
            source,
            envs: (0..workers).map(|_| Mutex::new(None)).collect(),
        })
    }

    pub fn workers(&self) -> usize {
        self.envs.len()
    }

    pub fn source(&self) -> &EnvSource {
        &self.source
    }

    /// Runs `job(i, env)` for every `i < n`; results come back in index order
    /// whatever the scheduling.
    pub fn run<F, R>(&self, n: usize, job: F) -> Vec<Result<R>>
    where
        F: Fn(usize, &mut dyn Environment) -> Result<R> + Sync,
        R: Send,
    {
        self.pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let slot = &self.envs[rayon::current_thread_index().unwrap_or(0) % self.envs.len()];
                    let mut guard = slot.lock().unwrap_or_else(|p| p.into_inner());
                    if guard.is_none() {
                        *guard = Some(self.source.make()?);
                    }
                    let env = guard.as_mut().expect("environment just created");
                    let result = job(i, env.as_mut());
                    if let Err(HarnessError::Env(EnvError::Session(_) | EnvError::Protocol(_))) = &result {
                        warn!("dropping environment after a failed session");
                        *guard = None;
                    }
                    result
                })
                .collect()
        })
    }
}
