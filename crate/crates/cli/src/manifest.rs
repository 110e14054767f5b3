use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Record of one command invocation, written next to its artifacts.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// file names relative to the manifest's directory
    pub artifacts: Vec<String>,
    pub tool_version: String,
}

/// Output directory of a run whose files have been checked for collisions.
pub struct RunDir {
    pub dir: PathBuf,
    pub run_id: String,
    pub artifacts: Vec<String>,
}

impl RunDir {
    /// Creates `dir` if needed and refuses to proceed when the manifest or any
    /// planned artifact already exists.
    pub fn reserve(dir: &Path, run_id: &str, artifacts: &[String]) -> Result<RunDir, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
        let run = RunDir { dir: dir.to_path_buf(), run_id: run_id.to_string(), artifacts: artifacts.to_vec() };
        for name in artifacts.iter().chain([&run.manifest_name()]) {
            let p = dir.join(name);
            if p.exists() {
                return Err(CliError::usage(format!("{} already exists; pick another --out or --run-id", p.display())));
            }
        }
        Ok(run)
    }

    fn manifest_name(&self) -> String {
        format!("{}.manifest.json", self.run_id)
    }

    pub fn path(&self, artifact: &str) -> PathBuf {
        self.dir.join(artifact)
    }

    pub fn finish(self, command: &str, config: serde_json::Value, seed: u64) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            run_id: self.run_id.clone(),
            command: command.to_string(),
            config,
            seed,
            artifacts: self.artifacts.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let path = self.dir.join(self.manifest_name());
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::usage(e.to_string()))?;
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| CliError::usage(format!("cannot create manifest {}: {e}", path.display())))?;
        f.write_all(json.as_bytes())
            .and_then(|_| f.write_all(b"\n"))
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
