//! Newline-delimited JSON protocol for external SED and separation models.
//!
//! Requests:
//! `{"op":"sed","id":..,"mel":[[..]],"hop_seconds":..}` and
//! `{"op":"separate","id":..,"sample_rate":..,"audio":[..],"query":..}`.
//! Replies carry the same `id` plus `framewise`/`clipwise`, `audio`, or
//! `error`.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum BackendRequest {
    Sed { id: String, mel: Vec<Vec<f64>>, hop_seconds: f64 },
    Separate { id: String, sample_rate: u32, audio: Vec<f64>, query: String },
}

impl BackendRequest {
    pub fn id(&self) -> &str {
        match self {
            BackendRequest::Sed { id, .. } | BackendRequest::Separate { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackendResponse {
    Error { id: String, error: String },
    Sed { id: String, framewise: Vec<Vec<f64>>, clipwise: Vec<f64> },
    Separate { id: String, audio: Vec<f64> },
}

impl BackendResponse {
    pub fn id(&self) -> &str {
        match self {
            BackendResponse::Error { id, .. } | BackendResponse::Sed { id, .. } | BackendResponse::Separate { id, .. } => id,
        }
    }
}

enum Stream {
    Child { child: Child, stdin: ChildStdin, stdout: BufReader<ChildStdout> },
    Tcp { writer: TcpStream, reader: BufReader<TcpStream> },
}

/// One live connection; serves one request at a time.
pub struct BackendConnection {
    stream: Stream,
}

impl BackendConnection {
    /// `tcp://host:port` connects a socket; anything else is a command line
    /// whose process speaks the protocol on its standard streams.
    pub fn open(address: &str) -> std::io::Result<Self> {
        let address = address.trim();
        if let Some(hostport) = address.strip_prefix("tcp://") {
            let writer = TcpStream::connect(hostport)?;
            let reader = BufReader::new(writer.try_clone()?);
            return Ok(Self { stream: Stream::Tcp { writer, reader } });
        }
        let mut parts = address.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty backend address"))?;
        let mut child = Command::new(program).args(parts).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { stream: Stream::Child { child, stdin, stdout } })
    }

    pub fn call(&mut self, req: &BackendRequest) -> std::result::Result<BackendResponse, String> {
        let line = serde_json::to_string(req).map_err(|e| e.to_string())?;
        let (w, r): (&mut dyn Write, &mut dyn BufRead) = match &mut self.stream {
            Stream::Child { stdin, stdout, .. } => (stdin, stdout),
            Stream::Tcp { writer, reader } => (writer, reader),
        };
        writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| e.to_string())?;
        let mut reply = String::new();
        if r.read_line(&mut reply).map_err(|e| e.to_string())? == 0 {
            return Err("backend closed the stream".into());
        }
        let resp: BackendResponse = serde_json::from_str(&reply).map_err(|e| format!("malformed backend reply: {e}"))?;
        if resp.id() != req.id() {
            return Err(format!("reply id {} does not match request id {}", resp.id(), req.id()));
        }
        Ok(resp)
    }
}

impl Drop for BackendConnection {
    fn drop(&mut self) {
        if let Stream::Child { child, .. } = &mut self.stream {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Up to `size` independent connections to one address, opened lazily.
pub struct BackendPool {
    address: String,
    size: usize,
    state: Mutex<(Vec<BackendConnection>, usize)>,
    available: Condvar,
    next_id: AtomicU64,
}

impl std::fmt::Debug for BackendPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendPool").field("address", &self.address).field("size", &self.size).finish()
    }
}

impl BackendPool {
    pub fn new(address: impl Into<String>, size: usize) -> Self {
        Self { address: address.into(), size: size.max(1), state: Mutex::new((Vec::new(), 0)), available: Condvar::new(), next_id: AtomicU64::new(0) }
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn next_id(&self) -> String {
        self.next_id.fetch_add(1, Ordering::Relaxed).to_string()
    }

    fn checkout(&self) -> std::io::Result<BackendConnection> {
        let mut st = self.state.lock().expect("pool lock");
        loop {
            if let Some(c) = st.0.pop() {
                return Ok(c);
            }
            if st.1 < self.size {
                st.1 += 1;
                drop(st);
                return BackendConnection::open(&self.address).inspect_err(|_| {
                    self.state.lock().expect("pool lock").1 -= 1;
                    self.available.notify_one();
                });
            }
            st = self.available.wait_timeout(st, Duration::from_millis(100)).expect("pool lock").0;
        }
    }

    /// Sends `req` on a pooled connection. Broken connections are discarded.
    pub fn call(&self, clip_id: &str, req: &BackendRequest) -> Result<BackendResponse> {
        let err = |msg: String| Error::Backend { clip_id: clip_id.to_string(), msg };
        let mut conn = self.checkout().map_err(|e| err(format!("connect {}: {e}", self.address)))?;
        let result = conn.call(req);
        let mut st = self.state.lock().expect("pool lock");
        match &result {
            Ok(_) => st.0.push(conn),
            Err(_) => st.1 -= 1,
        }
        drop(st);
        self.available.notify_one();
        match result.map_err(err)? {
            BackendResponse::Error { error, .. } => Err(Error::Backend { clip_id: clip_id.to_string(), msg: error }),
            ok => Ok(ok),
        }
    }
}

/// Answers requests line by line until EOF using `handle`.
pub fn serve<R: BufRead, W: Write>(input: R, mut output: W, mut handle: impl FnMut(BackendRequest) -> Result<BackendResponse>) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<BackendRequest>(&line) {
            Ok(req) => {
                let id = req.id().to_string();
                handle(req).unwrap_or_else(|e| BackendResponse::Error { id, error: e.to_string() })
            }
            Err(e) => BackendResponse::Error { id: String::new(), error: format!("bad request: {e}") },
        };
        writeln!(output, "{}", serde_json::to_string(&resp)?)?;
        output.flush()?;
    }
    Ok(())
}
