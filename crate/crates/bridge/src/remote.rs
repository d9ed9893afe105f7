//! Client side: an [`Environment`] backed by an adapter process.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use attn_core::{Action, RgbImage};
use attn_envs::{EnvError, EnvSpec, EnvStep, Environment};
use log::{debug, warn};

use crate::endpoint::Endpoint;
use crate::error::BridgeError;
use crate::protocol::{read_message, write_message, Handshake, Message};
use crate::server::{encode_action, serve};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

type Incoming = Receiver<Result<Message, BridgeError>>;

fn spawn_reader<R: Read + Send + 'static>(reader: R) -> Incoming {
    let (tx, rx) = mpsc::channel();
    thread::Builder::new()
        .name("bridge-reader".into())
        .spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let item = match read_message(&mut reader) {
                    Ok(Some(m)) => Ok(m),
                    Ok(None) => Err(BridgeError::Closed),
                    Err(e) => Err(e),
                };
                let stop = item.is_err();
                if tx.send(item).is_err() || stop {
                    break;
                }
            }
        })
        .expect("spawn bridge reader thread");
    rx
}

/// A session with an adapter. Requests are strictly one at a time.
pub struct RemoteEnv {
    spec: EnvSpec,
    handshake: Handshake,
    writer: Box<dyn Write + Send>,
    incoming: Incoming,
    timeout: Duration,
    child: Option<Child>,
    server: Option<JoinHandle<Result<(), BridgeError>>>,
    socket: Option<TcpStream>,
    /// Set once the session can no longer be trusted.
    broken: Option<String>,
    episode_done: Option<bool>,
}

impl std::fmt::Debug for RemoteEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEnv")
            .field("handshake", &self.handshake)
            .field("timeout", &self.timeout)
            .field("broken", &self.broken)
            .finish_non_exhaustive()
    }
}

impl RemoteEnv {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<RemoteEnv, BridgeError> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let mut last = None;
                for sock in addr.to_socket_addrs()? {
                    match TcpStream::connect_timeout(&sock, timeout) {
                        Ok(stream) => {
                            stream.set_nodelay(true)?;
                            let reader = stream.try_clone()?;
                            let socket = stream.try_clone()?;
                            let mut env = Self::from_streams(reader, stream, timeout)?;
                            env.socket = Some(socket);
                            return Ok(env);
                        }
                        Err(e) => last = Some(e),
                    }
                }
                Err(last
                    .unwrap_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("{addr} resolved to nothing")))
                    .into())
            }
            Endpoint::Command(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                match Self::from_streams(stdout, stdin, timeout) {
                    Ok(mut env) => {
                        env.child = Some(child);
                        Ok(env)
                    }
                    Err(e) => {
                        let _ = child.kill();
                        let _ = child.wait();
                        Err(e)
                    }
                }
            }
        }
    }

    /// Runs the handshake over an arbitrary pair of streams.
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Result<RemoteEnv, BridgeError>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let incoming = spawn_reader(reader);
        let handshake = match receive(&incoming, timeout)? {
            Message::Handshake(h) => h,
            other => {
                return Err(BridgeError::Protocol(format!(
                    "expected a handshake, got a '{}' message",
                    other.tag() as char
                )))
            }
        };
        handshake.validate()?;
        if handshake.channels != 3 {
            return Err(BridgeError::Protocol(format!(
                "only 3-channel RGB frames are supported, adapter declared {}",
                handshake.channels
            )));
        }
        debug!("connected to {:?}", handshake);
        let spec = EnvSpec {
            name: handshake.name.clone(),
            frame_width: handshake.width as usize,
            frame_height: handshake.height as usize,
            action: handshake.action.clone(),
            max_steps: handshake.max_steps as usize,
            solve_threshold: None,
            min_score: None,
        };
        Ok(RemoteEnv {
            spec,
            handshake,
            writer: Box::new(BufWriter::new(writer)),
            incoming,
            timeout,
            child: None,
            server: None,
            socket: None,
            broken: None,
            episode_done: None,
        })
    }

    /// Serves `env` on a background thread through in-process pipes and
    /// connects to it.
    pub fn loopback<E: Environment + 'static>(mut env: E, timeout: Duration) -> Result<RemoteEnv, BridgeError> {
        let (client_read, server_write) = io::pipe()?;
        let (server_read, client_write) = io::pipe()?;
        let server = thread::Builder::new()
            .name("bridge-loopback".into())
            .spawn(move || serve(&mut env, server_read, server_write))?;
        let mut remote = Self::from_streams(client_read, client_write, timeout)?;
        remote.server = Some(server);
        Ok(remote)
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    /// Whether frames arrive at `size`×`size` and need no resizing.
    pub fn is_native_size(&self, size: usize) -> bool {
        self.spec.frame_width == size && self.spec.frame_height == size
    }

    fn request(&mut self, msg: &Message) -> Result<(RgbImage, f64, bool), EnvError> {
        if let Some(why) = &self.broken {
            return Err(EnvError::Session(format!("session is unusable: {why}")));
        }
        let result = write_message(&mut self.writer, msg)
            .map_err(BridgeError::from)
            .and_then(|()| receive(&self.incoming, self.timeout))
            .and_then(|reply| self.decode_reply(reply));
        result.map_err(|e| {
            if !matches!(e, BridgeError::Remote { .. }) {
                self.broken = Some(e.to_string());
            }
            e.into()
        })
    }

    fn decode_reply(&self, reply: Message) -> Result<(RgbImage, f64, bool), BridgeError> {
        match reply {
            Message::Obs { reward, done, frame } => {
                if frame.len() != self.handshake.frame_len() {
                    return Err(BridgeError::Protocol(format!(
                        "frame payload is {} bytes, expected {}",
                        frame.len(),
                        self.handshake.frame_len()
                    )));
                }
                let image = RgbImage::from_raw(self.spec.frame_width, self.spec.frame_height, frame)
                    .map_err(|e| BridgeError::Protocol(e.to_string()))?;
                Ok((image, reward, done))
            }
            Message::Error { code, text } => Err(BridgeError::Remote { code, text }),
            other => Err(BridgeError::Protocol(format!(
                "expected an obs or error reply, got a '{}' message",
                other.tag() as char
            ))),
        }
    }
}

fn receive(incoming: &Incoming, timeout: Duration) -> Result<Message, BridgeError> {
    match incoming.recv_timeout(timeout) {
        Ok(item) => item,
        Err(RecvTimeoutError::Timeout) => Err(BridgeError::Timeout(timeout)),
        Err(RecvTimeoutError::Disconnected) => Err(BridgeError::Closed),
    }
}

impl Environment for RemoteEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<RgbImage, EnvError> {
        let (frame, _, _) = self.request(&Message::Reset { seed })?;
        self.episode_done = Some(false);
        Ok(frame)
    }

    fn step(&mut self, action: &Action) -> Result<EnvStep, EnvError> {
        if !self.spec.action.contains(action) {
            return Err(EnvError::InvalidAction(format!("{action:?} is outside {:?}", self.spec.action)));
        }
        match self.episode_done {
            None => return Err(EnvError::NotReset),
            Some(true) => return Err(EnvError::StepAfterDone),
            Some(false) => {}
        }
        let (observation, reward, done) = self.request(&Message::Step {
            action: encode_action(action),
        })?;
        self.episode_done = Some(done);
        Ok(EnvStep {
            observation,
            reward,
            done,
        })
    }
}

impl Drop for RemoteEnv {
    fn drop(&mut self) {
        if self.broken.is_none() {
            let _ = write_message(&mut self.writer, &Message::Close);
        }
        // dropping the writer closes the pipe so the peer sees end of stream
        self.writer = Box::new(io::sink());
        if let Some(socket) = self.socket.take() {
            let _ = socket.shutdown(std::net::Shutdown::Both);
        }
        if let Some(server) = self.server.take() {
            match server.join() {
                Ok(Err(e)) => warn!("loopback server ended with {e}"),
                Err(_) => warn!("loopback server panicked"),
                Ok(Ok(())) => {}
            }
        }
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + Duration::from_secs(2);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
        }
    }
}
