//! Drives environments that live in another process. An adapter speaks a
//! small length-prefixed binary protocol over a local socket or a child
//! process's stdio; [`RemoteEnv`] turns that into an ordinary
//! [`attn_envs::Environment`].

mod endpoint;
mod error;
pub mod protocol;
mod remote;
mod scripted;
mod server;

pub use endpoint::Endpoint;
pub use error::{error_code, BridgeError};
pub use protocol::{read_message, write_message, Handshake, Message, PROTOCOL_VERSION};
pub use remote::{RemoteEnv, DEFAULT_TIMEOUT};
pub use scripted::ScriptedEnv;
pub use server::{decode_action, encode_action, handshake_for, serve, serve_listener};
