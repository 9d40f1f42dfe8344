//! Line-protocol driver for a tool running as a child process.
//!
//! Each input is written as one line. The child answers with any number of
//! lines and then a sentinel line (`##END##` by default); the answer is every
//! byte before the sentinel line, newlines included. Output the child prints
//! between exchanges (a startup banner, say) is discarded before each send.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, TryRecvError};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};

use crate::backend::{BackendAdapter, BackendError};
use crate::cache::{InputAtom, OutputRecord};
use crate::canon::CanonicalHasher;
use crate::descriptor::BackendDescriptor;

pub const DEFAULT_SENTINEL: &str = "##END##";
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubprocessConfig {
    pub program: String,
    pub args: Vec<String>,
    /// Descriptor name; defaults to the program's file name.
    pub name: Option<String>,
    pub sentinel: String,
    pub timeout_ms: u64,
    /// Input whose trimmed answer becomes the descriptor version.
    pub version_probe: Option<String>,
    /// Input that resets the tool in place. Without one, `reset` restarts
    /// the process.
    pub reset_input: Option<String>,
    /// After launch, discard output until the tool has been silent this
    /// long. For tools that print a banner; 0 skips the wait.
    pub startup_quiet_ms: u64,
}

impl SubprocessConfig {
    pub fn new(program: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            name: None,
            sentinel: DEFAULT_SENTINEL.to_string(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            version_probe: None,
            reset_input: None,
            startup_quiet_ms: 0,
        }
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }

    pub fn args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args.extend(args.into_iter().map(Into::into));
        self
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn sentinel(mut self, sentinel: impl Into<String>) -> Self {
        self.sentinel = sentinel.into();
        self
    }

    pub fn timeout_ms(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = timeout_ms;
        self
    }

    pub fn version_probe(mut self, probe: impl Into<String>) -> Self {
        self.version_probe = Some(probe.into());
        self
    }

    pub fn reset_input(mut self, input: impl Into<String>) -> Self {
        self.reset_input = Some(input.into());
        self
    }

    pub fn startup_quiet_ms(mut self, ms: u64) -> Self {
        self.startup_quiet_ms = ms;
        self
    }

    fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            std::path::Path::new(&self.program)
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.program.clone())
        })
    }

    /// Short hash of everything that shapes the tool's answers. Timing
    /// settings are left out.
    pub fn fingerprint(&self) -> String {
        let mut h = CanonicalHasher::new();
        h.field(self.program.as_bytes());
        h.field(&(self.args.len() as u64).to_be_bytes());
        for a in &self.args {
            h.field(a.as_bytes());
        }
        h.field(self.sentinel.as_bytes());
        h.field(self.reset_input.as_deref().unwrap_or("").as_bytes());
        h.field(self.version_probe.as_deref().unwrap_or("").as_bytes());
        h.finish().to_hex()[..16].to_string()
    }
}

enum ReaderMsg {
    Line(Vec<u8>),
    Eof,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<ReaderMsg>,
}

pub struct SubprocessBackend {
    config: SubprocessConfig,
    running: Option<Running>,
    version: Option<String>,
}

impl std::fmt::Debug for SubprocessBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubprocessBackend")
            .field("config", &self.config)
            .field("running", &self.running.is_some())
            .field("version", &self.version)
            .finish()
    }
}

impl SubprocessBackend {
    pub fn new(config: SubprocessConfig) -> Self {
        Self {
            config,
            running: None,
            version: None,
        }
    }

    /// Constructs and starts.
    pub fn launch(config: SubprocessConfig) -> Result<Self, BackendError> {
        let mut backend = Self::new(config);
        backend.start()?;
        Ok(backend)
    }

    pub fn config(&self) -> &SubprocessConfig {
        &self.config
    }

    pub fn pid(&self) -> Option<u32> {
        self.running.as_ref().map(|r| r.child.id())
    }

    fn spawn(&self) -> Result<Running, BackendError> {
        let mut child = Command::new(&self.config.program)
            .args(&self.config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|source| BackendError::Spawn {
                program: self.config.program.clone(),
                source,
            })?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name(format!("{}-stdout", self.config.display_name()))
            .spawn(move || {
                let mut reader = BufReader::new(stdout);
                loop {
                    let mut line = Vec::new();
                    match reader.read_until(b'\n', &mut line) {
                        Ok(0) | Err(_) => {
                            let _ = tx.send(ReaderMsg::Eof);
                            return;
                        }
                        Ok(_) => {
                            if tx.send(ReaderMsg::Line(line)).is_err() {
                                return;
                            }
                        }
                    }
                }
            })
            .expect("spawn reader thread");
        debug!("started {} (pid {})", self.config.program, child.id());
        Ok(Running {
            child,
            stdin,
            lines: rx,
        })
    }

    /// Drops startup output until the child goes quiet.
    fn settle(&mut self) -> Result<(), BackendError> {
        let quiet = Duration::from_millis(self.config.startup_quiet_ms);
        if quiet.is_zero() {
            return Ok(());
        }
        let deadline = Instant::now() + Duration::from_millis(self.config.timeout_ms);
        let running = self.running.as_mut().expect("spawned");
        loop {
            match running.lines.recv_timeout(quiet) {
                Ok(ReaderMsg::Line(_)) if Instant::now() < deadline => continue,
                Ok(ReaderMsg::Line(_)) => {
                    self.kill();
                    return Err(BackendError::Timeout(self.config.timeout_ms));
                }
                Err(RecvTimeoutError::Timeout) => return Ok(()),
                Ok(ReaderMsg::Eof) | Err(RecvTimeoutError::Disconnected) => {
                    self.kill();
                    return Err(BackendError::Dead("exited during startup".into()));
                }
            }
        }
    }

    fn kill(&mut self) {
        if let Some(mut r) = self.running.take() {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }

    fn exchange(&mut self, input: &[u8]) -> Result<OutputRecord, BackendError> {
        if input.contains(&b'\n') {
            return Err(BackendError::Framing);
        }
        let timeout_ms = self.config.timeout_ms;
        let sentinel = self.config.sentinel.as_bytes().to_vec();
        let running = self
            .running
            .as_mut()
            .ok_or_else(|| BackendError::Dead("not started".into()))?;
        if let Ok(Some(status)) = running.child.try_wait() {
            self.running = None;
            return Err(BackendError::Dead(format!("exited with {status}")));
        }
        // drop anything printed since the last exchange
        loop {
            match running.lines.try_recv() {
                Ok(ReaderMsg::Line(_)) => continue,
                Ok(ReaderMsg::Eof) | Err(TryRecvError::Disconnected) => {
                    self.kill();
                    return Err(BackendError::Dead("output closed".into()));
                }
                Err(TryRecvError::Empty) => break,
            }
        }

        let started = Instant::now();
        let mut framed = Vec::with_capacity(input.len() + 1);
        framed.extend_from_slice(input);
        framed.push(b'\n');
        if let Err(e) = running
            .stdin
            .write_all(&framed)
            .and_then(|_| running.stdin.flush())
        {
            self.kill();
            return Err(BackendError::Dead(format!("write failed: {e}")));
        }

        let deadline = started + Duration::from_millis(timeout_ms);
        let mut output = Vec::new();
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match running.lines.recv_timeout(remaining) {
                Ok(ReaderMsg::Line(line)) => {
                    let body = line.strip_suffix(b"\n").unwrap_or(&line);
                    let body = body.strip_suffix(b"\r").unwrap_or(body);
                    if body == sentinel.as_slice() {
                        break;
                    }
                    output.extend_from_slice(&line);
                }
                Ok(ReaderMsg::Eof) | Err(RecvTimeoutError::Disconnected) => {
                    self.kill();
                    return Err(BackendError::Dead("exited mid-response".into()));
                }
                Err(RecvTimeoutError::Timeout) => {
                    // the stream is out of step now; the process cannot be reused
                    warn!("{} timed out after {timeout_ms} ms", self.config.program);
                    self.kill();
                    return Err(BackendError::Timeout(timeout_ms));
                }
            }
        }
        Ok(OutputRecord::new(
            output,
            started.elapsed().as_millis() as u64,
        ))
    }
}

impl BackendAdapter for SubprocessBackend {
    fn start(&mut self) -> Result<(), BackendError> {
        if self.running.is_some() {
            return Ok(());
        }
        self.running = Some(self.spawn()?);
        self.settle()?;
        if let Some(probe) = self.config.version_probe.clone() {
            let out = self.exchange(probe.as_bytes())?;
            self.version = Some(String::from_utf8_lossy(&out.bytes).trim().to_string());
        }
        Ok(())
    }

    fn send(&mut self, input: &InputAtom) -> Result<OutputRecord, BackendError> {
        self.exchange(input.as_bytes())
    }

    fn reset(&mut self) -> Result<(), BackendError> {
        match self.config.reset_input.clone() {
            Some(input) => self.exchange(input.as_bytes()).map(|_| ()),
            None => {
                self.shutdown()?;
                self.start()
            }
        }
    }

    fn describe(&self) -> Result<BackendDescriptor, BackendError> {
        let version = match (&self.version, &self.config.version_probe) {
            (Some(v), _) => v.clone(),
            (None, None) => String::new(),
            (None, Some(_)) => return Err(BackendError::Dead("version not probed yet".into())),
        };
        Ok(BackendDescriptor::new(
            self.config.display_name(),
            version,
            self.config.fingerprint(),
        ))
    }

    fn shutdown(&mut self) -> Result<(), BackendError> {
        if let Some(mut r) = self.running.take() {
            drop(r.stdin);
            let deadline = Instant::now() + Duration::from_millis(200);
            loop {
                match r.child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => {
                        thread::sleep(Duration::from_millis(5))
                    }
                    _ => {
                        let _ = r.child.kill();
                        let _ = r.child.wait();
                        break;
                    }
                }
            }
        }
        Ok(())
    }
}

impl Drop for SubprocessBackend {
    fn drop(&mut self) {
        self.kill();
    }
}
