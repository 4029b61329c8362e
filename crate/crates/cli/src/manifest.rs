//! Run manifests: written before a command produces anything else.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub status: String,
    pub outputs: Vec<PathBuf>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn begin(
        path: &Path,
        command: &str,
        config_path: Option<&Path>,
        config_hash: String,
        seed: u64,
        outputs: Vec<PathBuf>,
    ) -> Result<Self> {
        let m = RunManifest {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            config_hash,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now(),
            finished_at: None,
            status: "running".into(),
            outputs,
        };
        m.write(path)?;
        Ok(m)
    }

    pub fn finish(&mut self, path: &Path, status: &str) -> Result<()> {
        self.finished_at = Some(now());
        self.status = status.to_string();
        self.write(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}
