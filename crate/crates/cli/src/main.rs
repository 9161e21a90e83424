mod args;
mod commands;
mod data;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::manifest::Recorder;

const THREADS_ENV: &str = "LPDH_THREADS";

fn configure_threads() {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return;
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring {THREADS_ENV}={raw:?}: expected a positive integer"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    configure_threads();
    let mut rec = Recorder::new();
    let result = commands::dispatch(&cli.command, &mut rec);
    let (code, error) = match result {
        Ok(()) => (0, None),
        Err(e) => {
            eprintln!("error: {e}");
            (1, Some(e.to_string()))
        }
    };
    if let Err(e) = rec.append(&cli, code, error) {
        eprintln!("warning: run manifest not written: {e}");
    }
    ExitCode::from(code)
}
