use std::io;
use std::time::Duration;

use attn_envs::EnvError;
use thiserror::Error;

use crate::protocol::codes;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("protocol version mismatch: expected {expected}, peer speaks {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("peer closed the connection")]
    Closed,
    #[error("remote error {code}: {text}")]
    Remote { code: u32, text: String },
    #[error("bad endpoint {0:?}; expected tcp:HOST:PORT or cmd:PROGRAM [ARGS...]")]
    Endpoint(String),
}

impl From<BridgeError> for EnvError {
    fn from(e: BridgeError) -> Self {
        match e {
            BridgeError::Protocol(_) | BridgeError::VersionMismatch { .. } => EnvError::Protocol(e.to_string()),
            BridgeError::Remote { code, text } => match code {
                codes::STEP_AFTER_DONE => EnvError::StepAfterDone,
                codes::NOT_RESET => EnvError::NotReset,
                codes::INVALID_ACTION => EnvError::InvalidAction(text),
                codes::PROTOCOL => EnvError::Protocol(text),
                _ => EnvError::Session(format!("remote error {code}: {text}")),
            },
            BridgeError::Endpoint(_) => EnvError::Config(e.to_string()),
            BridgeError::Io(_) | BridgeError::Timeout(_) | BridgeError::Closed => EnvError::Session(e.to_string()),
        }
    }
}

/// Error code an adapter reports for a failed environment call.
pub fn error_code(e: &EnvError) -> u32 {
    match e {
        EnvError::StepAfterDone => codes::STEP_AFTER_DONE,
        EnvError::NotReset => codes::NOT_RESET,
        EnvError::InvalidAction(_) => codes::INVALID_ACTION,
        EnvError::Protocol(_) => codes::PROTOCOL,
        EnvError::Config(_) | EnvError::Session(_) => codes::INTERNAL,
    }
}
