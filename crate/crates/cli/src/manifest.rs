//! One JSON line per invocation: command, flags, seed, stage timings and
//! SHA-256 of every file read or written.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use lpdh_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::Cli;

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Serialize)]
struct Stage {
    stage: String,
    ms: f64,
}

#[derive(Debug, Serialize)]
struct Record<'a> {
    command: &'a str,
    argv: Vec<String>,
    flags: serde_json::Value,
    seed: Option<u64>,
    exit_code: u8,
    error: Option<String>,
    stages: Vec<Stage>,
    wall_ms: f64,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    threads: usize,
    unix_time: u64,
}

#[derive(Debug)]
pub struct Recorder {
    start: Instant,
    last: Instant,
    stages: Vec<Stage>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Recorder {
    pub fn new() -> Self {
        let now = Instant::now();
        Self {
            start: now,
            last: now,
            stages: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Close the current stage: time since the previous lap.
    pub fn lap(&mut self, name: &str) {
        let now = Instant::now();
        let d = now - self.last;
        self.last = now;
        self.stage(name, d);
    }

    pub fn stage(&mut self, name: &str, d: Duration) {
        self.stages.push(Stage {
            stage: name.to_string(),
            ms: d.as_secs_f64() * 1e3,
        });
    }

    /// Restart the lap clock without recording anything.
    pub fn reset_lap(&mut self) {
        self.last = Instant::now();
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let h = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), h);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let h = sha256_file(path)?;
        self.outputs.insert(path.display().to_string(), h);
        Ok(())
    }

    pub fn append(self, cli: &Cli, exit_code: u8, error: Option<String>) -> Result<()> {
        let record = Record {
            command: cli.command.name(),
            argv: std::env::args().collect(),
            flags: serde_json::to_value(&cli.command).unwrap_or(serde_json::Value::Null),
            seed: cli.command.seed(),
            exit_code,
            error,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
            stages: self.stages,
            inputs: self.inputs,
            outputs: self.outputs,
            threads: rayon::current_num_threads(),
            unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let line = serde_json::to_string(&record).map_err(|e| Error::Format(e.to_string()))?;
        let path = &cli.manifest;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))
    }
}
