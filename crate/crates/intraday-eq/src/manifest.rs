use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one run, written beside its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub scenario: PathBuf,
    pub seed: u64,
    pub flags: BTreeMap<String, String>,
    pub tool_version: String,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    /// Command-line arguments that repeat this run into `out`.
    pub fn argv(&self, out: &Path) -> Vec<String> {
        let mut args = vec![
            self.subcommand.clone(),
            "--scenario".to_string(),
            self.scenario.display().to_string(),
            "--seed".to_string(),
            self.seed.to_string(),
            "--out".to_string(),
            out.display().to_string(),
        ];
        for (k, v) in &self.flags {
            args.push(format!("--{k}"));
            args.push(v.clone());
        }
        args
    }
}
