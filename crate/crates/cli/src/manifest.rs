use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Record of one command invocation, written before any of its outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, with the output directory made
    /// explicit. Replaying parses these again.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub wall_clock_unix_secs: u64,
}

impl RunManifest {
    pub fn new(command: &str, original: &[String], out: &Path, config: serde_json::Value, seed: u64) -> Self {
        let mut argv = Vec::with_capacity(original.len() + 2);
        let mut rest = original.iter();
        while let Some(a) = rest.next() {
            if a == "--out" {
                rest.next();
            } else if !a.starts_with("--out=") {
                argv.push(a.clone());
            }
        }
        argv.push("--out".into());
        argv.push(out.display().to_string());
        Self {
            command: command.into(),
            argv,
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn path_in(out: &Path, command: &str) -> PathBuf {
        out.join(format!("{command}.manifest.json"))
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let path = Self::path_in(out, &self.command);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}
