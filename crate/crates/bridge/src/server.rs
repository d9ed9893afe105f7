//! Adapter side of the protocol, used for loopback tests and to expose the
//! built-in environments to other processes.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpListener;

use attn_core::{Action, ActionSpec, RgbImage};
use attn_envs::{EnvError, EnvSpec, Environment};
use log::{debug, info, warn};

use crate::error::{error_code, BridgeError};
use crate::protocol::{codes, read_message, write_message, Handshake, Message, PROTOCOL_VERSION};

pub fn handshake_for(spec: &EnvSpec) -> Result<Handshake, BridgeError> {
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| BridgeError::Protocol(format!("{what} {v} does not fit in u32")))
    };
    Ok(Handshake {
        version: PROTOCOL_VERSION,
        name: spec.name.clone(),
        height: dim(spec.frame_height, "frame height")?,
        width: dim(spec.frame_width, "frame width")?,
        channels: 3,
        action: spec.action.clone(),
        max_steps: dim(spec.max_steps, "max steps")?,
    })
}

/// Turns the raw values of a step message into an action for `spec`.
pub fn decode_action(spec: &ActionSpec, values: &[f64]) -> Result<Action, String> {
    match spec {
        ActionSpec::Continuous { bounds } => {
            if values.len() != bounds.len() {
                return Err(format!("expected {} action values, got {}", bounds.len(), values.len()));
            }
            Ok(Action::Continuous(values.to_vec()))
        }
        ActionSpec::Discrete { n } => match values {
            [v] if v.is_finite() && v.fract() == 0.0 && *v >= 0.0 && *v < *n as f64 => Ok(Action::Discrete(*v as usize)),
            _ => Err(format!("expected one integral action index below {n}, got {values:?}")),
        },
    }
}

/// Raw values sent for an action.
pub fn encode_action(action: &Action) -> Vec<f64> {
    match action {
        Action::Continuous(v) => v.clone(),
        Action::Discrete(i) => vec![*i as f64],
    }
}

fn obs(spec: &EnvSpec, frame: RgbImage, reward: f64, done: bool) -> Message {
    if frame.width() != spec.frame_width || frame.height() != spec.frame_height {
        return Message::Error {
            code: codes::INTERNAL,
            text: format!(
                "environment produced a {}x{} frame, declared {}x{}",
                frame.width(),
                frame.height(),
                spec.frame_width,
                spec.frame_height
            ),
        };
    }
    Message::Obs {
        reward,
        done,
        frame: frame.into_bytes(),
    }
}

fn env_error(e: EnvError) -> Message {
    Message::Error {
        code: error_code(&e),
        text: e.to_string(),
    }
}

/// Serves `env` over a byte stream until the client sends close or hangs up.
pub fn serve<E, R, W>(env: &mut E, reader: R, writer: W) -> Result<(), BridgeError>
where
    E: Environment + ?Sized,
    R: Read,
    W: Write,
{
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    let spec = env.spec().clone();
    write_message(&mut writer, &Message::Handshake(handshake_for(&spec)?))?;
    loop {
        let Some(msg) = read_message(&mut reader)? else {
            debug!("client hung up");
            return Ok(());
        };
        let reply = match msg {
            Message::Reset { seed } => match env.reset(seed) {
                Ok(frame) => obs(&spec, frame, 0.0, false),
                Err(e) => env_error(e),
            },
            Message::Step { action } => match decode_action(&spec.action, &action) {
                Ok(action) => match env.step(&action) {
                    Ok(step) => obs(&spec, step.observation, step.reward, step.done),
                    Err(e) => env_error(e),
                },
                Err(text) => Message::Error {
                    code: codes::INVALID_ACTION,
                    text,
                },
            },
            Message::Close => return Ok(()),
            other => Message::Error {
                code: codes::PROTOCOL,
                text: format!("unexpected '{}' message from client", other.tag() as char),
            },
        };
        write_message(&mut writer, &reply)?;
    }
}

/// Accepts connections one at a time, serving each with a fresh environment.
/// Stops after `max_sessions` sessions when given.
pub fn serve_listener<F, E>(listener: &TcpListener, mut make_env: F, max_sessions: Option<usize>) -> Result<(), BridgeError>
where
    F: FnMut() -> Result<E, EnvError>,
    E: Environment,
{
    let mut served = 0;
    while max_sessions.is_none_or(|m| served < m) {
        let (stream, peer) = listener.accept()?;
        info!("session from {peer}");
        stream.set_nodelay(true)?;
        let mut env = make_env().map_err(|e| BridgeError::Protocol(e.to_string()))?;
        if let Err(e) = serve(&mut env, stream.try_clone()?, stream) {
            warn!("session from {peer} ended: {e}");
        }
        served += 1;
    }
    Ok(())
}
