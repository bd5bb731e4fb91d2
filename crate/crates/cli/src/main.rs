use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use projlab::Error;

mod commands;
mod config;
mod svg;

use config::{Command, RunConfig};

/// Runs one projlab experiment and writes its outputs to a directory.
#[derive(Parser, Debug)]
#[command(name = "projlab", version, about)]
struct Cli {
    command: Command,
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// override a configuration key, e.g. `--set set.depth=5`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let body = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn init_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("PROJLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("PROJLAB_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: &Cli) -> Result<(), Error> {
    init_threads()?;
    let cfg = RunConfig::load(&cli.config, &cli.set, cli.command)?;
    let outputs = commands::run(&cfg)?;
    std::fs::create_dir_all(&cli.out)?;
    for (name, bytes) in outputs {
        std::fs::write(cli.out.join(name), bytes)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => return fail("usage", e.to_string().trim_end(), 2),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if matches!(e, Error::Infeasible(_)) { 3 } else { 2 };
            fail(e.kind(), &e.to_string(), code)
        }
    }
}
