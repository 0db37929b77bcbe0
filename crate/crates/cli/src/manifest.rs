//! Output directories and run manifests.
//!
//! The manifest holds only quantities determined by the configuration and
//! inputs, so reruns reproduce it byte for byte. Wall-clock times go to a
//! separate `timing.json`.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::{hex_sha256, RunConfig};
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub index: usize,
    pub time: f64,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub kind: String,
    /// SHA-256 of the canonical effective configuration (`config.toml`).
    pub config_digest: String,
    pub seed: Option<u64>,
    pub inputs: Vec<InputFile>,
    /// `completed` or `blow_up`.
    pub status: String,
    pub snapshots: Vec<SnapshotEntry>,
    pub diagnostics: serde_json::Value,
    /// Every file written, relative to the output directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Timing {
    started_unix: f64,
    finished_unix: f64,
    wall_seconds: f64,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Collects the files a command writes and emits the manifest last.
pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<String>,
    started: (f64, Instant),
}

impl OutputDir {
    /// Creates the directory. Commands call this only after their inputs
    /// have been read and the computation has finished.
    pub fn create(root: &Path, started: (f64, Instant)) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self { root: root.to_path_buf(), artifacts: Vec::new(), started })
    }

    /// Registers `rel` and returns its full path, creating parent directories.
    pub fn file(&mut self, rel: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        self.artifacts.push(rel.to_string());
        Ok(path)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<(), CliError> {
        let path = self.file(rel)?;
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write_text(rel, &text)
    }

    /// Writes `config.toml`, `timing.json` and finally the manifest.
    #[allow(clippy::too_many_arguments)]
    pub fn finish(
        mut self,
        command: &str,
        config: &RunConfig,
        inputs: Vec<InputFile>,
        status: &str,
        snapshots: Vec<SnapshotEntry>,
        diagnostics: serde_json::Value,
    ) -> Result<RunManifest, CliError> {
        self.write_text("config.toml", &config.canonical())?;
        let finished = unix_now();
        let timing = Timing {
            started_unix: self.started.0,
            finished_unix: finished,
            wall_seconds: self.started.1.elapsed().as_secs_f64(),
        };
        self.write_json(TIMING_FILE, &timing)?;
        let manifest = RunManifest {
            command: command.to_string(),
            kind: config.kind().to_string(),
            config_digest: config.digest(),
            seed: config.seed(),
            inputs,
            status: status.to_string(),
            snapshots,
            diagnostics,
            artifacts: self.artifacts.clone(),
        };
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

pub fn start_clock() -> (f64, Instant) {
    (unix_now(), Instant::now())
}

/// Digest of an input file as it was read.
pub fn input_file(path: &Path) -> Result<InputFile, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(InputFile { path: path.display().to_string(), sha256: hex_sha256(&bytes) })
}
