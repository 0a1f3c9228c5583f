use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

use crate::config::Resolved;

/// Provenance record written next to every command's outputs. Timestamps
/// live only here so the data files themselves stay byte-reproducible.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub master_seed: u64,
    pub config: Resolved,
    pub started_at: String,
    pub finished_at: String,
    pub wall_time_s: f64,
    pub outputs: Vec<PathBuf>,
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &str, config: &Resolved, started: DateTime<Utc>, outputs: Vec<PathBuf>) -> Self {
        let finished = Utc::now();
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: config.seed,
            config: config.clone(),
            started_at: stamp(started),
            finished_at: stamp(finished),
            wall_time_s: (finished - started).num_milliseconds() as f64 / 1000.0,
            outputs,
        }
    }

    pub fn path(out_dir: &Path, command: &str) -> PathBuf {
        out_dir.join(format!("{command}.manifest.json"))
    }
}
