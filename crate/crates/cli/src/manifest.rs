use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use tdxviz::{Error, Result};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Record of one CLI invocation, written into the output root when the
/// command finishes.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: &'static str,
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn new(command: &'static str, config: impl Serialize, seed: u64, inputs: Vec<PathBuf>, output: &Path) -> Self {
        Self {
            command,
            config: serde_json::to_value(config).expect("configurations serialize to JSON"),
            seed,
            version: tdxviz::VERSION,
            inputs,
            output: output.to_path_buf(),
            duration_secs: 0.0,
        }
    }

    /// Stamps the duration and writes the manifest via a temp file + rename.
    pub fn finish(mut self, started: Instant) -> Result<()> {
        self.duration_secs = started.elapsed().as_secs_f64();
        let path = self.output.join(RUN_MANIFEST_FILE);
        let tmp = self.output.join(format!(".{RUN_MANIFEST_FILE}.tmp"));
        let json = serde_json::to_string_pretty(&self).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(&tmp, json).map_err(|e| io_error(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_error(&path, e))
    }
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
