use std::io;
use std::path::PathBuf;

use attn_bridge::BridgeError;
use attn_envs::EnvError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] attn_core::Error),
    #[error("environment error: {0}")]
    Env(#[from] EnvError),
    #[error("bridge error: {0}")]
    Bridge(#[from] BridgeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("checkpoint in {dir} was written for layout {found:016x}, this run uses {expected:016x}")]
    LayoutMismatch { dir: PathBuf, expected: u64, found: u64 },
    #[error("checkpoint in {0} is corrupt: {1}")]
    Checkpoint(PathBuf, String),
    #[error("no traces to analyze")]
    EmptyReport,
    #[error("traces carry no frames; record them with frames kept")]
    MissingFrames,
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
