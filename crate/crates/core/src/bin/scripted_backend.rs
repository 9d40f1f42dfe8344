//! The scripted backend as a standalone process speaking the line protocol:
//! one command per input line, answered by the result line and `##END##`.

use std::io::{self, BufRead, Write};
use std::time::Duration;

use clap::Parser;
use replaycache::backend::{scripted_eval, ScriptedState, DEFAULT_SENTINEL};
use replaycache::cache::InputAtom;

#[derive(Parser)]
#[command(
    name = "scripted-backend",
    version,
    about = "Deterministic line-protocol test backend"
)]
struct Args {
    /// Extra latency added to every answer.
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
    /// Line printed once at startup, before any input is read.
    #[arg(long)]
    banner: Option<String>,
    #[arg(long, default_value = DEFAULT_SENTINEL)]
    sentinel: String,
}

fn main() -> io::Result<()> {
    let args = Args::parse();
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    if let Some(banner) = &args.banner {
        writeln!(out, "{banner}")?;
        out.flush()?;
    }
    let mut state = ScriptedState::with_latency(args.latency_ms);
    for line in stdin.lock().split(b'\n') {
        let mut line = line?;
        if line.last() == Some(&b'\r') {
            line.pop();
        }
        let answer = scripted_eval(&mut state, &InputAtom::new(line));
        if args.latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(args.latency_ms));
        }
        out.write_all(&answer)?;
        writeln!(out)?;
        writeln!(out, "{}", args.sentinel)?;
        out.flush()?;
    }
    Ok(())
}
