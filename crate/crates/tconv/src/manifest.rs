use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::cli::Command;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun a command: the fully resolved arguments plus
/// build and timing provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Command,
    pub seed: Option<u64>,
    pub version: String,
    /// Set when the binary was built with `TCONV_GIT_REV` in the environment.
    pub git_revision: Option<String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub outputs: Vec<PathBuf>,
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl RunManifest {
    pub fn new(config: Command, started_unix_ms: u64, outputs: Vec<PathBuf>) -> Self {
        Self {
            command: config.name().to_string(),
            seed: config.seed(),
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            git_revision: option_env!("TCONV_GIT_REV").map(str::to_string),
            started_unix_ms,
            finished_unix_ms: unix_ms(),
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> crate::Result<()> {
        crate::artifacts::write_json(path, self)
    }

    pub fn read(path: &Path) -> crate::Result<Self> {
        crate::artifacts::read_json(path)
    }
}
