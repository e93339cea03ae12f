use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;

/// Everything needed to rerun a command and reproduce its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    /// Run-dependent details; absent with `--stable-output`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub informational: Option<Informational>,
}

#[derive(Debug, Serialize)]
pub struct Informational {
    pub args: Vec<String>,
    pub started_unix_secs: u64,
    pub wall_time_secs: f64,
    pub workers: usize,
}

impl RunManifest {
    pub fn new(command: &str, master_seed: u64, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            master_seed,
            config,
            outputs: Vec::new(),
            informational: None,
        }
    }

    pub fn finish(&mut self, started: SystemTime, elapsed: Duration, workers: usize, stable: bool) {
        if !stable {
            self.informational = Some(Informational {
                args: std::env::args().skip(1).collect(),
                started_unix_secs: started
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                wall_time_secs: elapsed.as_secs_f64(),
                workers,
            });
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}
