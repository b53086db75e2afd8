//! Sessions with out-of-process policies over the line protocol in
//! [`super::wire`].

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::wire::{format_request, parse_response, Response};
use super::{Policy, ProposalFailure, ProposalRequest};
use crate::actuation::ControlVector;
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq)]
pub enum Transport {
    /// Child process speaking the protocol on stdin/stdout.
    Command { program: String, args: Vec<String> },
    Tcp { addr: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub transport: Transport,
    pub timeout: Duration,
    /// Independent connections; batch workers share them round-robin.
    pub sessions: usize,
}

impl SessionConfig {
    pub fn new(transport: Transport) -> Self {
        Self {
            transport,
            timeout: DEFAULT_TIMEOUT,
            sessions: 1,
        }
    }
}

/// Frame accounting: `requests == responses + timeouts + transport_errors`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameStats {
    pub requests: usize,
    /// Frames attributed to a request, well-formed or not.
    pub responses: usize,
    pub malformed: usize,
    pub timeouts: usize,
    pub transport_errors: usize,
    /// Late frames for requests that had already timed out.
    pub stale_discarded: usize,
}

enum Outcome {
    Response,
    Timeout,
    Transport,
}

struct Session {
    writer: Option<Box<dyn Write + Send>>,
    lines: Receiver<Option<String>>,
    child: Option<Child>,
    socket: Option<TcpStream>,
    closed: Option<String>,
}

fn spawn_reader<R: Read + Send + 'static>(r: R) -> Receiver<Option<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(r).lines() {
            match line {
                Ok(l) => {
                    if tx.send(Some(l)).is_err() {
                        return;
                    }
                }
                Err(_) => break,
            }
        }
        let _ = tx.send(None);
    });
    rx
}

impl Session {
    fn open(transport: &Transport) -> Result<Self> {
        match transport {
            Transport::Command { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Transport(format!("cannot start '{program}': {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self {
                    writer: Some(Box::new(stdin)),
                    lines: spawn_reader(stdout),
                    child: Some(child),
                    socket: None,
                    closed: None,
                })
            }
            Transport::Tcp { addr } => {
                let stream =
                    TcpStream::connect(addr).map_err(|e| Error::Transport(format!("cannot connect to {addr}: {e}")))?;
                stream.set_nodelay(true).ok();
                let reader = stream.try_clone()?;
                let writer = stream.try_clone()?;
                Ok(Self {
                    writer: Some(Box::new(writer)),
                    lines: spawn_reader(reader),
                    child: None,
                    socket: Some(stream),
                    closed: None,
                })
            }
        }
    }

    fn exchange(
        &mut self,
        req: &ProposalRequest,
        timeout: Duration,
        stats: &mut FrameStats,
    ) -> (std::result::Result<ControlVector, ProposalFailure>, Outcome) {
        if let Some(why) = &self.closed {
            return (Err(ProposalFailure::Transport(why.clone())), Outcome::Transport);
        }
        let line = format_request(req) + "\n";
        let sent = match self.writer.as_mut() {
            Some(w) => w.write_all(line.as_bytes()).and_then(|_| w.flush()),
            None => Ok(()),
        };
        if let Err(e) = sent {
            let why = format!("write failed: {e}");
            self.closed = Some(why.clone());
            return (Err(ProposalFailure::Transport(why)), Outcome::Transport);
        }
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let frame = match self.lines.recv_timeout(left) {
                Ok(Some(l)) => l,
                Ok(None) | Err(RecvTimeoutError::Disconnected) => {
                    let why = "session closed by peer".to_string();
                    self.closed = Some(why.clone());
                    return (Err(ProposalFailure::Transport(why)), Outcome::Transport);
                }
                Err(RecvTimeoutError::Timeout) => {
                    let msg = format!("no response to id {} within {:?}", req.id, timeout);
                    return (Err(ProposalFailure::Timeout(msg)), Outcome::Timeout);
                }
            };
            match parse_response(&frame) {
                Ok(resp) if resp.id() == req.id => {
                    let r = match resp {
                        Response::Result { record, .. } => Ok(record.control),
                        Response::Error { reason, .. } => Err(ProposalFailure::Policy(reason)),
                    };
                    return (r, Outcome::Response);
                }
                Ok(_) => stats.stale_discarded += 1,
                Err(e) if e.id().is_some_and(|id| id != req.id) => stats.stale_discarded += 1,
                Err(e) => {
                    stats.malformed += 1;
                    return (Err(ProposalFailure::Parse(e.to_string())), Outcome::Response);
                }
            }
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.writer = None;
        if let Some(s) = &self.socket {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(child) = self.child.as_mut() {
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

/// A policy served by one or more external sessions. Each session carries
/// one outstanding request at a time.
pub struct ExternalPolicy {
    sessions: Vec<Mutex<Session>>,
    timeout: Duration,
    stats: Mutex<FrameStats>,
}

impl ExternalPolicy {
    pub fn connect(cfg: &SessionConfig) -> Result<Self> {
        if cfg.sessions == 0 {
            return Err(Error::Transport("at least one session is required".into()));
        }
        let sessions = (0..cfg.sessions)
            .map(|_| Session::open(&cfg.transport).map(Mutex::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sessions,
            timeout: cfg.timeout,
            stats: Mutex::new(FrameStats::default()),
        })
    }

    pub fn stats(&self) -> FrameStats {
        *self.stats.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Policy for ExternalPolicy {
    fn name(&self) -> &str {
        "external"
    }

    fn propose(&self, req: &ProposalRequest) -> std::result::Result<ControlVector, ProposalFailure> {
        let slot = rayon::current_thread_index().unwrap_or(0) % self.sessions.len();
        let mut session = self.sessions[slot].lock().unwrap_or_else(|e| e.into_inner());
        let mut local = FrameStats::default();
        let (result, outcome) = session.exchange(req, self.timeout, &mut local);
        drop(session);
        let mut stats = self.stats.lock().unwrap_or_else(|e| e.into_inner());
        stats.requests += 1;
        stats.malformed += local.malformed;
        stats.stale_discarded += local.stale_discarded;
        match outcome {
            Outcome::Response => stats.responses += 1,
            Outcome::Timeout => stats.timeouts += 1,
            Outcome::Transport => stats.transport_errors += 1,
        }
        result
    }
}
