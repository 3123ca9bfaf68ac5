//! Run manifests: one JSON line per command invocation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Effective configuration after merging file, flags and defaults.
    pub config: serde_json::Value,
    pub dataset_digest: String,
    /// Relative to the directory holding the manifest.
    pub artifacts: Vec<PathBuf>,
    pub tool_version: String,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, dataset_digest: String) -> Self {
        Self {
            command: command.to_string(),
            config,
            dataset_digest,
            artifacts: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_secs: 0.0,
        }
    }

    /// Appends the manifest as one line, with artifact paths made relative
    /// to `dir`. Every artifact must exist.
    pub fn append_to(&self, dir: &Path) -> Result<PathBuf> {
        if let Some(missing) = self.artifacts.iter().find(|p| !p.exists()) {
            return Err(Error::format(missing, "artifact listed in manifest is missing"));
        }
        let mut rel = self.clone();
        for p in &mut rel.artifacts {
            if let Ok(r) = p.strip_prefix(dir) {
                *p = r.to_path_buf();
            }
        }
        let path = dir.join(MANIFEST_FILE);
        let mut line = serde_json::to_vec(&rel).expect("manifest serializes");
        line.push(b'\n');
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(Error::io(&path))?;
        f.write_all(&line).map_err(Error::io(&path))?;
        Ok(path)
    }
}

/// All manifests recorded in `dir`, oldest first.
pub fn read_manifests(dir: &Path) -> Result<Vec<RunManifest>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(&path, e)))
        .collect()
}
