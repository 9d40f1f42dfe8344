use std::io;
use std::sync::{Arc, Mutex};

fn main() {
    let err: replaycache::cli::SharedWriter = Arc::new(Mutex::new(io::stderr()));
    let code = replaycache::cli::run(std::env::args_os(), &mut io::stdout().lock(), err);
    std::process::exit(code);
}
