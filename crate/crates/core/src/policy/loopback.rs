//! In-process protocol server for conformance testing, with optional
//! per-request fault injection.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::wire::{format_error, format_result, parse_request};
use super::ProposalRequest;
use crate::actuation::ControlVector;
use crate::seed::rng_for;

pub type Responder = Arc<dyn Fn(&ProposalRequest) -> Result<ControlVector, String> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Result frame missing its last number.
    ShortFrame,
    /// Result frame with a non-numeric token.
    Garbage,
    /// Correct frame sent only after the plan's delay.
    Delay,
    /// An ERROR frame instead of a result.
    Error,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultPlan {
    pub faults: BTreeMap<u64, FaultKind>,
    pub delay: Duration,
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with(mut self, id: u64, kind: FaultKind) -> Self {
        self.faults.insert(id, kind);
        self
    }

    /// Assigns each id a fault independently with the given probabilities
    /// (short, garbage, delay, error).
    pub fn sampled(ids: impl IntoIterator<Item = u64>, rates: [f64; 4], delay: Duration, seed: u64) -> Self {
        let mut rng = rng_for(seed);
        let kinds = [FaultKind::ShortFrame, FaultKind::Garbage, FaultKind::Delay, FaultKind::Error];
        let mut faults = BTreeMap::new();
        for id in ids {
            let mut u: f64 = rng.gen();
            for (k, r) in kinds.iter().zip(rates) {
                if u < r {
                    faults.insert(id, *k);
                    break;
                }
                u -= r;
            }
        }
        Self { faults, delay }
    }

    pub fn count(&self, kind: FaultKind) -> usize {
        self.faults.values().filter(|&&k| k == kind).count()
    }
}

fn respond(req: &ProposalRequest, responder: &Responder, fault: Option<FaultKind>) -> String {
    let good = || match responder(req) {
        Ok(cv) => format_result(req.id, req.p_init, req.p_target_delta, &cv),
        Err(reason) => format_error(req.id, &reason),
    };
    match fault {
        None | Some(FaultKind::Delay) => good(),
        Some(FaultKind::Error) => format_error(req.id, "injected fault"),
        Some(FaultKind::ShortFrame) => {
            let line = good();
            match line.rfind(' ') {
                Some(i) if line.starts_with("RESULT") => line[..i].to_string(),
                _ => line,
            }
        }
        Some(FaultKind::Garbage) => {
            let line = good();
            let mut toks: Vec<&str> = line.split(' ').collect();
            if toks.len() > 5 && toks[0] == "RESULT" {
                toks[5] = "x#q";
            }
            toks.join(" ")
        }
    }
}

/// Serves requests from `input` until end of stream. Delayed responses are
/// written from a helper thread so later requests are not held up.
pub fn serve_stream<R, W>(input: R, output: W, responder: Responder, faults: &FaultPlan) -> io::Result<()>
where
    R: BufRead,
    W: Write + Send + 'static,
{
    let out = Arc::new(Mutex::new(output));
    let write_line = |out: &Mutex<W>, line: &str| -> io::Result<()> {
        let mut w = out.lock().unwrap_or_else(|e| e.into_inner());
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()
    };
    let mut pending = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req = match parse_request(&line) {
            Ok(r) => r,
            Err(e) => {
                write_line(&out, &format_error(0, &format!("bad request: {e}")))?;
                continue;
            }
        };
        let fault = faults.faults.get(&req.id).copied();
        let text = respond(&req, &responder, fault);
        if fault == Some(FaultKind::Delay) {
            let out = Arc::clone(&out);
            let delay = faults.delay;
            pending.push(thread::spawn(move || {
                thread::sleep(delay);
                let _ = write_line(&out, &text);
            }));
        } else {
            write_line(&out, &text)?;
        }
    }
    for h in pending {
        let _ = h.join();
    }
    Ok(())
}

/// TCP server on a loopback port; one thread per connection.
pub struct LoopbackServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl LoopbackServer {
    pub fn spawn(responder: Responder, faults: FaultPlan) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", responder, faults)
    }

    pub fn bind(addr: &str, responder: Responder, faults: FaultPlan) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let faults = Arc::new(faults);
        let accept = thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                stream.set_nodelay(true).ok();
                let responder = Arc::clone(&responder);
                let faults = Arc::clone(&faults);
                thread::spawn(move || {
                    let Ok(reader) = stream.try_clone() else { return };
                    let _ = serve_stream(BufReader::new(reader), stream, responder, &faults);
                });
            }
        });
        Ok(Self {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        if let Some(h) = self.accept.take() {
            self.stop.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect(self.addr);
            let _ = h.join();
        }
    }
}
