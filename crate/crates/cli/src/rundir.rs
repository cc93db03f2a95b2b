//! Run directories and manifests. Every command that produces artifacts gets
//! its own directory named by timestamp plus config hash, and writes exactly
//! one manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub source_rev: String,
    pub output_dir: String,
    pub started_at: u64,
    pub finished_at: u64,
    pub duration_ms: u64,
    pub outputs: Vec<String>,
}

pub struct RunDir {
    pub path: PathBuf,
    command: String,
    args: Vec<String>,
    config_hash: String,
    seed: u64,
    started: std::time::Instant,
    started_at: u64,
    outputs: Vec<String>,
}

impl RunDir {
    /// Create `<base>/<timestamp>-<hash8>/`.
    pub fn create(
        base: &Path,
        command: &str,
        config_hash: &str,
        seed: u64,
    ) -> std::io::Result<RunDir> {
        let started_at = crate::reports::now_unix();
        let short_hash: String = config_hash.chars().take(8).collect();
        let mut path = base.join(format!("{started_at}-{short_hash}"));
        // avoid collisions from runs started within the same second
        let mut salt = 0u32;
        while path.exists() {
            salt += 1;
            path = base.join(format!("{started_at}-{short_hash}-{salt}"));
        }
        std::fs::create_dir_all(&path)?;
        Ok(RunDir {
            path,
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_hash: config_hash.to_string(),
            seed,
            started: std::time::Instant::now(),
            started_at,
            outputs: Vec::new(),
        })
    }

    pub fn file(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.path.join(name)
    }

    /// Write the manifest and return it.
    pub fn finish(self) -> std::io::Result<RunManifest> {
        let manifest = RunManifest {
            schema_version: crate::SCHEMA_VERSION,
            command: self.command,
            args: self.args,
            config_hash: self.config_hash,
            seed: self.seed,
            source_rev: source_rev(),
            output_dir: self.path.display().to_string(),
            started_at: self.started_at,
            finished_at: crate::reports::now_unix(),
            duration_ms: self.started.elapsed().as_millis() as u64,
            outputs: self.outputs,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(self.path.join("manifest.json"), json)?;
        Ok(manifest)
    }
}

/// Best-effort source revision for provenance.
fn source_rev() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}
