//! The `replaycache` command line.
//!
//! [`run`] is the whole program minus process plumbing, so it can be driven
//! in-process by tests. Reports go to `out`; errors and warnings go to `err`
//! the moment they happen.

mod exit;
mod script;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};

pub use exit::{engine_exit, store_exit, CliError, ExitCode};
pub use script::{parse_script, ScriptError};

use crate::backend::{
    BackendAdapter, ScriptedBackend, SubprocessBackend, SubprocessConfig, DEFAULT_SENTINEL,
    DEFAULT_TIMEOUT_MS,
};
use crate::cache::{parse_rules, CacheabilityRule};
use crate::engine::{
    Engine, EngineConfig, RunMode, SessionScript, VersionPolicy, DEFAULT_SLOW_THRESHOLD_MS,
};
use crate::memlayer::{LruConfig, MemLayer, DEFAULT_CAPACITY};
use crate::persist::{verify_dir, CacheStore, StoreError};

pub type SharedWriter = Arc<Mutex<dyn Write + Send>>;

#[derive(Parser, Debug)]
#[command(
    name = "replaycache",
    version,
    about = "Record, replay and cache sessions with a stateful black-box tool"
)]
struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "REPLAYCACHE_STORE")]
    store: Option<PathBuf>,
    /// What to do when the cache was recorded against another tool version:
    /// strict, warn or ignore.
    #[arg(long, global = true, default_value_t = VersionPolicy::Warn, value_parser = parse_policy)]
    version_policy: VersionPolicy,
    /// Warn before re-running cached steps that took at least this long.
    #[arg(long, global = true, default_value_t = DEFAULT_SLOW_THRESHOLD_MS)]
    slow_threshold_ms: u64,
    /// Entries kept in memory; 0 disables the memory layer.
    #[arg(long, global = true, default_value_t = DEFAULT_CAPACITY)]
    mem_capacity: usize,
    /// Cacheability rules, one per line: `exact|prefix <input> cacheable|non-cacheable`.
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    /// Also write the session report as JSON here.
    #[arg(long, global = true)]
    report_file: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

fn parse_policy(s: &str) -> Result<VersionPolicy, String> {
    s.parse()
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Send every input to the live tool and store the answers.
    Record {
        script: PathBuf,
        #[command(flatten)]
        backend: BackendFlags,
    },
    /// Answer every input from the store; never starts a tool.
    Replay { script: PathBuf },
    /// Answer from the store where possible, from the live tool otherwise.
    Run {
        script: PathBuf,
        #[command(flatten)]
        backend: BackendFlags,
    },
    /// Store and memory-layer statistics.
    Stats,
    /// List stored entries, optionally only keys starting with a hex prefix.
    Inspect { key_prefix: Option<String> },
    /// Check every record's checksum and key chain.
    Verify,
    /// Write the store to a single archive file.
    Export { archive: PathBuf },
    /// Create the store from an archive file.
    Import { archive: PathBuf },
}

#[derive(Args, Debug)]
struct BackendFlags {
    /// Use the built-in scripted backend.
    #[arg(long, conflicts_with = "backend_cmd")]
    scripted: bool,
    /// Latency added to each scripted-backend answer.
    #[arg(long, default_value_t = 0, requires = "scripted")]
    latency_ms: u64,
    /// Program speaking the line protocol.
    #[arg(long)]
    backend_cmd: Option<String>,
    /// Argument for the program (repeatable).
    #[arg(long = "backend-arg", allow_hyphen_values = true)]
    backend_args: Vec<String>,
    /// Backend name recorded in the store (default: program file name).
    #[arg(long)]
    backend_name: Option<String>,
    /// Input whose answer is the tool's version string.
    #[arg(long)]
    version_probe: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_MS)]
    backend_timeout_ms: u64,
    /// Line that ends each answer.
    #[arg(long, default_value = DEFAULT_SENTINEL)]
    sentinel: String,
    /// Input that resets the tool between sessions instead of restarting it.
    #[arg(long)]
    reset_input: Option<String>,
    /// Discard startup output until the tool has been silent this long.
    #[arg(long, default_value_t = 0)]
    startup_quiet_ms: u64,
}

impl BackendFlags {
    fn launch(&self) -> Result<Box<dyn BackendAdapter>, CliError> {
        if self.scripted {
            return Ok(Box::new(ScriptedBackend::new(self.latency_ms)));
        }
        let Some(program) = &self.backend_cmd else {
            return Err(CliError::usage(
                "a backend is required: pass --scripted or --backend-cmd",
            ));
        };
        let mut config = SubprocessConfig::new(program.clone())
            .args(self.backend_args.iter().cloned())
            .sentinel(self.sentinel.clone())
            .timeout_ms(self.backend_timeout_ms)
            .startup_quiet_ms(self.startup_quiet_ms);
        if let Some(n) = &self.backend_name {
            config = config.name(n.clone());
        }
        if let Some(p) = &self.version_probe {
            config = config.version_probe(p.clone());
        }
        if let Some(r) = &self.reset_input {
            config = config.reset_input(r.clone());
        }
        let mut backend = SubprocessBackend::new(config);
        backend.start().map_err(|e| CliError {
            exit: ExitCode::Backend,
            message: e.to_string(),
        })?;
        Ok(Box::new(backend))
    }
}

/// Output of an in-process invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Captured {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the program with `args` (including the program name) and captures
/// what it prints.
pub fn run_captured<I, T>(args: I) -> Captured
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut out = Vec::new();
    let err = Arc::new(Mutex::new(Vec::<u8>::new()));
    let code = run(args, &mut out, err.clone());
    let stderr = String::from_utf8_lossy(&err.lock().unwrap()).into_owned();
    Captured {
        code,
        stdout: String::from_utf8_lossy(&out).into_owned(),
        stderr,
    }
}

/// Runs the program and returns its exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: SharedWriter) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    ExitCode::Success.code()
                }
                _ => {
                    let _ = err.lock().unwrap().write_all(text.as_bytes());
                    ExitCode::Usage.code()
                }
            };
        }
    };
    match execute(cli, out, err.clone()) {
        Ok(()) => ExitCode::Success.code(),
        Err(e) => {
            let _ = writeln!(err.lock().unwrap(), "error: {e}");
            e.exit.code()
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write, err: SharedWriter) -> Result<(), CliError> {
    let store_dir = || {
        cli.store
            .clone()
            .ok_or_else(|| CliError::usage("no store given: pass --store or set REPLAYCACHE_STORE"))
    };
    match &cli.command {
        Command::Record { script, backend } => session(
            &cli,
            store_dir()?,
            script,
            RunMode::Record,
            Some(backend),
            out,
            err,
        ),
        Command::Replay { script } => {
            session(&cli, store_dir()?, script, RunMode::Replay, None, out, err)
        }
        Command::Run { script, backend } => session(
            &cli,
            store_dir()?,
            script,
            RunMode::Hybrid,
            Some(backend),
            out,
            err,
        ),
        Command::Stats => stats(&cli, &store_dir()?, out),
        Command::Inspect { key_prefix } => inspect(&store_dir()?, key_prefix.as_deref(), out),
        Command::Verify => verify(&store_dir()?, out),
        Command::Export { archive } => {
            let store = CacheStore::open_snapshot(store_dir()?)?;
            let n = store.export(archive)?;
            write_out(
                out,
                &format!("exported {n} records to {}\n", archive.display()),
            )
        }
        Command::Import { archive } => {
            if !archive.exists() {
                return Err(CliError::usage(format!(
                    "no archive at {}",
                    archive.display()
                )));
            }
            let dir = store_dir()?;
            let n = CacheStore::import(archive, &dir)?;
            write_out(
                out,
                &format!("imported {n} records into {}\n", dir.display()),
            )
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError {
        exit: ExitCode::Integrity,
        message: format!("writing output: {e}"),
    })
}

fn read_text(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn load_script(path: &Path) -> Result<SessionScript, CliError> {
    parse_script(&read_text(path, "script")?).map_err(|e| CliError::usage(e.to_string()))
}

fn load_rules(path: Option<&Path>) -> Result<Vec<CacheabilityRule>, CliError> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => parse_rules(&read_text(p, "rules file")?)
            .map_err(|e| CliError::usage(format!("{}: {e}", p.display()))),
    }
}

fn session(
    cli: &Cli,
    dir: PathBuf,
    script_path: &Path,
    mode: RunMode,
    backend_flags: Option<&BackendFlags>,
    out: &mut dyn Write,
    err: SharedWriter,
) -> Result<(), CliError> {
    let script = load_script(script_path)?;
    let rules = load_rules(cli.rules.as_deref())?;

    let (store, mut backend) = match backend_flags {
        None => (CacheStore::open_snapshot(&dir)?, None),
        Some(flags) => match CacheStore::open(&dir) {
            Ok(store) => (store, Some(flags.launch()?)),
            Err(StoreError::NotFound(_)) => {
                let backend = flags.launch()?;
                let live = backend.describe().map_err(|e| CliError {
                    exit: ExitCode::Backend,
                    message: e.to_string(),
                })?;
                (CacheStore::create(&dir, &live)?, Some(backend))
            }
            Err(e) => return Err(e.into()),
        },
    };

    let config = EngineConfig {
        rules,
        version_policy: cli.version_policy,
        slow_threshold_ms: cli.slow_threshold_ms,
    };
    let layer = MemLayer::new(LruConfig::with_capacity(cli.mem_capacity));
    let engine = Engine::new(Arc::new(store), Arc::new(layer), config).on_warning(move |w| {
        let _ = writeln!(err.lock().unwrap(), "warning: {w}");
    });
    let result = engine.run_session(
        &script,
        mode,
        backend
            .as_mut()
            .map(|b| b.as_mut() as &mut dyn BackendAdapter),
    );
    if let Some(b) = backend.as_mut() {
        let _ = b.shutdown();
    }
    let report = result?;
    engine.store().close()?;

    write_out(out, &report.render_text())?;
    if let Some(path) = &cli.report_file {
        fs::write(path, report.render_json()).map_err(|e| CliError {
            exit: ExitCode::Integrity,
            message: format!("writing {}: {e}", path.display()),
        })?;
    }
    Ok(())
}

fn stats(cli: &Cli, dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let store = CacheStore::open_snapshot(dir)?;
    let backend = store.backend();
    let engine = Engine::new(
        Arc::new(store),
        Arc::new(MemLayer::new(LruConfig::with_capacity(cli.mem_capacity))),
        EngineConfig::default(),
    );
    let s = engine.aggregate_stats()?;
    let mut text = String::new();
    let _ = writeln!(text, "store: {}", dir.display());
    let _ = writeln!(text, "backend: {backend}");
    let _ = writeln!(text, "records: {}", s.store.records);
    let _ = writeln!(text, "keys: {}", s.store.keys);
    let _ = writeln!(text, "memory_capacity: {}", s.memory_capacity);
    let _ = writeln!(text, "memory_resident: {}", s.memory.resident_entries);
    let _ = writeln!(text, "occupancy: {:.3}", s.occupancy);
    let _ = writeln!(text, "hits: {}", s.memory.hits);
    let _ = writeln!(text, "misses: {}", s.memory.misses);
    let _ = writeln!(text, "evictions: {}", s.memory.evictions);
    let _ = writeln!(text, "flags: {}", s.flags().len());
    for f in s.flags() {
        let _ = writeln!(
            text,
            "  {:?} at {} ({:.3})",
            f.kind, f.raised_at, f.occupancy
        );
    }
    write_out(out, &text)
}

fn inspect(dir: &Path, key_prefix: Option<&str>, out: &mut dyn Write) -> Result<(), CliError> {
    let prefix = match key_prefix {
        Some(p) if p.bytes().all(|b| b.is_ascii_hexdigit()) => p.to_ascii_lowercase(),
        Some(p) => return Err(CliError::usage(format!("key prefix {p:?} is not hex"))),
        None => String::new(),
    };
    let store = CacheStore::open_snapshot(dir)?;
    let mut text = String::new();
    let mut listed = 0;
    for e in store.records()? {
        let key = e.key.to_hex();
        if !key.starts_with(&prefix) {
            continue;
        }
        listed += 1;
        let _ = writeln!(
            text,
            "{} key={key} version={} elapsed_ms={} created_at={} input={}",
            e.global_id,
            e.backend.version,
            e.output.elapsed_ms,
            e.created_at,
            e.input.preview()
        );
    }
    let _ = writeln!(text, "{listed} entries");
    write_out(out, &text)
}

fn verify(dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let report = verify_dir(dir)?;
    write_out(out, &report.to_string())?;
    match report.corrupt_records.first() {
        None => Ok(()),
        Some(first) => Err(CliError {
            exit: ExitCode::Integrity,
            message: format!(
                "{} corrupt record(s), first at record #{}",
                report.corrupt_records.len(),
                first.ordinal
            ),
        }),
    }
}
