//! Wire format. Every message is a little-endian `u32` length (covering the
//! tag and payload), a one-byte tag, then the payload.
//!
//! | tag | message   | payload |
//! |-----|-----------|---------|
//! | `H` | handshake | `u32` version, `u16` name length, UTF-8 name, `u32` height, `u32` width, `u32` channels, `u8` action kind (0 continuous, 1 discrete), `u32` action dim, continuous only: dim × (`f64` low, `f64` high), `u32` max steps |
//! | `R` | reset     | `u64` seed |
//! | `S` | step      | one `f64` per action dimension; discrete actions send the index as a single `f64` |
//! | `O` | obs       | `f64` reward, `u8` done, height·width·channels frame bytes (row-major RGB) |
//! | `E` | error     | `u32` code, UTF-8 text |
//! | `C` | close     | empty |
//!
//! The server sends the handshake first; after that every reset or step is
//! answered by exactly one obs or error.

use std::io::{self, Read, Write};

use attn_core::ActionSpec;
use byteorder::{ReadBytesExt, WriteBytesExt, LE};

use crate::error::BridgeError;

pub const PROTOCOL_VERSION: u32 = 1;

pub const TAG_HANDSHAKE: u8 = b'H';
pub const TAG_RESET: u8 = b'R';
pub const TAG_STEP: u8 = b'S';
pub const TAG_OBS: u8 = b'O';
pub const TAG_ERROR: u8 = b'E';
pub const TAG_CLOSE: u8 = b'C';

/// Largest accepted message body, generous for any sane frame.
pub const MAX_MESSAGE_LEN: u32 = 64 << 20;

/// Error codes carried by `E` messages.
pub mod codes {
    pub const STEP_AFTER_DONE: u32 = 1;
    pub const NOT_RESET: u32 = 2;
    pub const INVALID_ACTION: u32 = 3;
    pub const PROTOCOL: u32 = 4;
    pub const INTERNAL: u32 = 5;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Handshake {
    pub version: u32,
    pub name: String,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub action: ActionSpec,
    pub max_steps: u32,
}

impl Handshake {
    pub fn frame_len(&self) -> usize {
        self.height as usize * self.width as usize * self.channels as usize
    }

    pub fn validate(&self) -> Result<(), BridgeError> {
        if self.version != PROTOCOL_VERSION {
            return Err(BridgeError::VersionMismatch {
                expected: PROTOCOL_VERSION,
                found: self.version,
            });
        }
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(BridgeError::Protocol(format!(
                "observation shape must be positive, got {}x{}x{}",
                self.height, self.width, self.channels
            )));
        }
        if self.frame_len() + 9 > MAX_MESSAGE_LEN as usize {
            return Err(BridgeError::Protocol(format!("frame of {} bytes is too large", self.frame_len())));
        }
        self.action
            .validate()
            .map_err(|e| BridgeError::Protocol(format!("bad action spec: {e}")))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Handshake(Handshake),
    Reset { seed: u64 },
    Step { action: Vec<f64> },
    Obs { reward: f64, done: bool, frame: Vec<u8> },
    Error { code: u32, text: String },
    Close,
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Handshake(_) => TAG_HANDSHAKE,
            Message::Reset { .. } => TAG_RESET,
            Message::Step { .. } => TAG_STEP,
            Message::Obs { .. } => TAG_OBS,
            Message::Error { .. } => TAG_ERROR,
            Message::Close => TAG_CLOSE,
        }
    }

    /// Tag plus payload, without the length prefix.
    pub fn encode_body(&self) -> Vec<u8> {
        let mut out = vec![self.tag()];
        // writes into a Vec cannot fail
        let w = &mut out;
        match self {
            Message::Handshake(h) => {
                w.write_u32::<LE>(h.version).unwrap();
                let name = h.name.as_bytes();
                let name = &name[..name.len().min(u16::MAX as usize)];
                w.write_u16::<LE>(name.len() as u16).unwrap();
                w.extend_from_slice(name);
                w.write_u32::<LE>(h.height).unwrap();
                w.write_u32::<LE>(h.width).unwrap();
                w.write_u32::<LE>(h.channels).unwrap();
                match &h.action {
                    ActionSpec::Continuous { bounds } => {
                        w.write_u8(0).unwrap();
                        w.write_u32::<LE>(bounds.len() as u32).unwrap();
                        for &(lo, hi) in bounds {
                            w.write_f64::<LE>(lo).unwrap();
                            w.write_f64::<LE>(hi).unwrap();
                        }
                    }
                    ActionSpec::Discrete { n } => {
                        w.write_u8(1).unwrap();
                        w.write_u32::<LE>(*n as u32).unwrap();
                    }
                }
                w.write_u32::<LE>(h.max_steps).unwrap();
            }
            Message::Reset { seed } => w.write_u64::<LE>(*seed).unwrap(),
            Message::Step { action } => {
                for &v in action {
                    w.write_f64::<LE>(v).unwrap();
                }
            }
            Message::Obs { reward, done, frame } => {
                w.write_f64::<LE>(*reward).unwrap();
                w.write_u8(u8::from(*done)).unwrap();
                w.extend_from_slice(frame);
            }
            Message::Error { code, text } => {
                w.write_u32::<LE>(*code).unwrap();
                w.extend_from_slice(text.as_bytes());
            }
            Message::Close => {}
        }
        out
    }

    /// Full wire bytes including the length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let body = self.encode_body();
        let mut out = Vec::with_capacity(body.len() + 4);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    /// Decodes a tag-plus-payload body. Trailing bytes are an error except in
    /// obs frames, whose length the caller checks against the handshake.
    pub fn decode_body(body: &[u8]) -> Result<Message, BridgeError> {
        let (&tag, mut p) = body
            .split_first()
            .ok_or_else(|| BridgeError::Protocol("empty message".into()))?;
        let short = |what: &str| BridgeError::Protocol(format!("truncated {what} message"));
        let msg = match tag {
            TAG_HANDSHAKE => {
                let e = |_| short("handshake");
                let version = p.read_u32::<LE>().map_err(e)?;
                let name_len = p.read_u16::<LE>().map_err(e)? as usize;
                if p.len() < name_len {
                    return Err(short("handshake"));
                }
                let name = String::from_utf8(p[..name_len].to_vec())
                    .map_err(|_| BridgeError::Protocol("environment name is not UTF-8".into()))?;
                p = &p[name_len..];
                let height = p.read_u32::<LE>().map_err(e)?;
                let width = p.read_u32::<LE>().map_err(e)?;
                let channels = p.read_u32::<LE>().map_err(e)?;
                let kind = p.read_u8().map_err(e)?;
                let dim = p.read_u32::<LE>().map_err(e)? as usize;
                let action = match kind {
                    0 => {
                        if p.len() < dim.saturating_mul(16) {
                            return Err(short("handshake"));
                        }
                        let mut bounds = Vec::with_capacity(dim);
                        for _ in 0..dim {
                            let lo = p.read_f64::<LE>().map_err(e)?;
                            let hi = p.read_f64::<LE>().map_err(e)?;
                            bounds.push((lo, hi));
                        }
                        ActionSpec::Continuous { bounds }
                    }
                    1 => ActionSpec::Discrete { n: dim },
                    k => return Err(BridgeError::Protocol(format!("unknown action kind {k}"))),
                };
                let max_steps = p.read_u32::<LE>().map_err(e)?;
                Message::Handshake(Handshake {
                    version,
                    name,
                    height,
                    width,
                    channels,
                    action,
                    max_steps,
                })
            }
            TAG_RESET => Message::Reset {
                seed: p.read_u64::<LE>().map_err(|_| short("reset"))?,
            },
            TAG_STEP => {
                if p.len() % 8 != 0 {
                    return Err(BridgeError::Protocol(format!(
                        "step payload of {} bytes is not a whole number of f64 values",
                        p.len()
                    )));
                }
                let action = p
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                p = &[];
                Message::Step { action }
            }
            TAG_OBS => {
                let reward = p.read_f64::<LE>().map_err(|_| short("obs"))?;
                let done = match p.read_u8().map_err(|_| short("obs"))? {
                    0 => false,
                    1 => true,
                    d => return Err(BridgeError::Protocol(format!("done flag must be 0 or 1, got {d}"))),
                };
                let frame = p.to_vec();
                p = &[];
                Message::Obs { reward, done, frame }
            }
            TAG_ERROR => {
                let code = p.read_u32::<LE>().map_err(|_| short("error"))?;
                let text = String::from_utf8_lossy(p).into_owned();
                p = &[];
                Message::Error { code, text }
            }
            TAG_CLOSE => Message::Close,
            t => return Err(BridgeError::Protocol(format!("unknown message tag 0x{t:02x}"))),
        };
        if !p.is_empty() {
            return Err(BridgeError::Protocol(format!(
                "{} trailing bytes after '{}' message",
                p.len(),
                tag as char
            )));
        }
        Ok(msg)
    }
}

pub fn write_message<W: Write + ?Sized>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&msg.encode())?;
    w.flush()
}

/// Reads one message. A clean end of stream before the length prefix yields
/// `Ok(None)`.
pub fn read_message<R: Read + ?Sized>(r: &mut R) -> Result<Option<Message>, BridgeError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(BridgeError::Protocol("stream ended inside a length prefix".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len);
    if len == 0 || len > MAX_MESSAGE_LEN {
        return Err(BridgeError::Protocol(format!("message length {len} out of range")));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            BridgeError::Protocol(format!("stream ended inside a {len}-byte message"))
        } else {
            e.into()
        }
    })?;
    Message::decode_body(&body).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuous_step_is_three_le_doubles() {
        let bytes = Message::Step { action: vec![0.5, 1.0, 0.0] }.encode();
        let mut want = vec![25, 0, 0, 0, b'S'];
        want.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0xe0, 0x3f]);
        want.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0xf0, 0x3f]);
        want.extend_from_slice(&[0; 8]);
        assert_eq!(bytes, want);
    }

    #[test]
    fn reset_and_close_bytes() {
        assert_eq!(
            Message::Reset { seed: 0x0102030405060708 }.encode(),
            [9, 0, 0, 0, b'R', 8, 7, 6, 5, 4, 3, 2, 1]
        );
        assert_eq!(Message::Close.encode(), [1, 0, 0, 0, b'C']);
    }

    #[test]
    fn rejects_bad_bodies() {
        for body in [
            &[][..],
            &[b'X'][..],
            &[b'R', 1, 2][..],
            &[b'S', 0, 0, 0][..],
            &[b'O', 0, 0, 0, 0, 0, 0, 0, 0, 2][..],
            &[b'C', 0][..],
        ] {
            assert!(matches!(Message::decode_body(body), Err(BridgeError::Protocol(_))), "{body:?}");
        }
    }

    #[test]
    fn truncated_stream_is_protocol_error() {
        let bytes = Message::Reset { seed: 1 }.encode();
        let mut r = &bytes[..bytes.len() - 2];
        assert!(matches!(read_message(&mut r), Err(BridgeError::Protocol(_))));
        let mut empty: &[u8] = &[];
        assert!(read_message(&mut empty).unwrap().is_none());
    }
}
