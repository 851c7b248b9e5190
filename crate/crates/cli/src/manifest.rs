//! Run directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::config::ResolvedConfig;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("UAV_AOU_GIT_REV"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub overrides: Vec<String>,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: Option<f64>,
    pub out_dir: PathBuf,
    pub artifacts: Vec<String>,
    pub config: ResolvedConfig,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn begin(command: &str, config: &ResolvedConfig, overrides: &[String], out_dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        fs::write(out_dir.join("config.toml"), config.to_toml()).context("writing config.toml")?;
        let m = Self {
            command: command.to_string(),
            version: VERSION.to_string(),
            seed: config.seed,
            overrides: overrides.to_vec(),
            started: now(),
            finished: None,
            out_dir: out_dir.to_path_buf(),
            artifacts: vec!["config.toml".into()],
            config: config.clone(),
        };
        m.write()?;
        Ok(m)
    }

    pub fn path(&self, artifact: &str) -> PathBuf {
        self.out_dir.join(artifact)
    }

    /// Records an artifact name and returns its path.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        self.path(name)
    }

    pub fn finish(&mut self) -> anyhow::Result<()> {
        self.finished = Some(now());
        self.write()
    }

    fn write(&self) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(self.path("manifest.json"), text).context("writing manifest.json")
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
