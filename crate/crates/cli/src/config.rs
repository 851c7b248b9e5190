//! Experiment configuration: TOML parsing, overrides, and resolution.
//!
//! A config file has a top-level `algorithm` and `seed` plus the sections
//! `[scenario]`, `[training]`, `[meta]` and `[baseline]`. The scenario is
//! either spelled out field by field, generated from `[scenario.layout]`, or
//! taken from a named `preset` with individual fields overriding it.
//!
//! Resolution turns the file into a [`ResolvedConfig`] whose scenario lists
//! every device and UAV explicitly. Serializing a resolved config and parsing
//! it again yields the same resolved config.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use uav_aou::baselines::{MixerConfig, MixerMode};
use uav_aou::env::{ChannelModel, DeviceConfig, Grid, LayoutSpec, Normalization, ScenarioConfig, UavConfig, Weights};
use uav_aou::mappo::TrainConfig;
use uav_aou::meta::MetaConfig;
use uav_aou::presets;

/// A config problem, reported with the offending field.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{field}: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { field: field.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Mappo,
    Vdn,
    Qmix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    Nominal,
    Desk,
}

/// `[scenario]` as written; every field is optional until resolution.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    preset: Option<Preset>,
    seed: Option<u64>,
    horizon: Option<usize>,
    rate_min: Option<f64>,
    weights: Option<Weights>,
    normalization: Option<Normalization>,
    grid: Option<Grid>,
    channel: Option<ChannelModel>,
    devices: Option<Vec<DeviceConfig>>,
    uavs: Option<Vec<UavConfig>>,
    layout: Option<LayoutSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    algorithm: Algorithm,
    #[serde(default)]
    seed: u64,
    scenario: Option<ScenarioSection>,
    #[serde(default)]
    training: TrainConfig,
    #[serde(default)]
    meta: MetaConfig,
    #[serde(default)]
    baseline: BaselineSection,
}

/// `[baseline]`: the off-policy trainer settings plus the step budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    /// Environment steps; by default the MAPPO budget `epochs * rollouts * T`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    pub hidden: Vec<usize>,
    pub mixing_dim: usize,
    pub target_update_period: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_fraction: f64,
    pub gamma: f64,
    pub lr: f64,
    pub batch: usize,
    pub capacity: usize,
    pub train_every: usize,
    pub reward_scale: f64,
    pub max_grad_norm: f64,
    pub episodes_per_row: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let m = MixerConfig::default();
        Self {
            budget: None,
            hidden: m.hidden,
            mixing_dim: m.mixing_dim,
            target_update_period: m.target_update_period,
            epsilon_start: m.epsilon_start,
            epsilon_end: m.epsilon_end,
            epsilon_fraction: m.epsilon_fraction,
            gamma: m.gamma,
            lr: m.lr,
            batch: m.batch,
            capacity: m.capacity,
            train_every: m.train_every,
            reward_scale: m.reward_scale,
            max_grad_norm: m.max_grad_norm,
            episodes_per_row: m.episodes_per_row,
        }
    }
}

impl BaselineSection {
    pub fn mixer(&self, mode: MixerMode, seed: u64) -> MixerConfig {
        MixerConfig {
            mode,
            hidden: self.hidden.clone(),
            mixing_dim: self.mixing_dim,
            target_update_period: self.target_update_period,
            epsilon_start: self.epsilon_start,
            epsilon_end: self.epsilon_end,
            epsilon_fraction: self.epsilon_fraction,
            gamma: self.gamma,
            lr: self.lr,
            batch: self.batch,
            capacity: self.capacity,
            train_every: self.train_every,
            reward_scale: self.reward_scale,
            max_grad_norm: self.max_grad_norm,
            episodes_per_row: self.episodes_per_row,
            seed,
        }
    }
}

/// Fully resolved experiment; `training.seed` always equals `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub training: TrainConfig,
    pub meta: MetaConfig,
    pub baseline: BaselineSection,
}

impl ResolvedConfig {
    /// Off-policy step budget after defaulting.
    pub fn baseline_budget(&self) -> usize {
        self.baseline
            .budget
            .unwrap_or(self.training.epochs * self.training.rollouts * self.scenario.horizon)
    }

    pub fn mixer(&self) -> Option<MixerConfig> {
        let mode = match self.algorithm {
            Algorithm::Mappo => return None,
            Algorithm::Vdn => MixerMode::Additive,
            Algorithm::Qmix => MixerMode::Monotonic,
        };
        Some(self.baseline.mixer(mode, self.seed))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate().map_err(|e| match e {
            uav_aou::env::EnvError::InvalidConfig { field, reason } => ConfigError::new(format!("scenario.{field}"), reason),
            other => ConfigError::new("scenario", other.to_string()),
        })?;
        lift(self.training.validate())?;
        lift(self.meta.validate())?;
        if let Some(m) = self.mixer() {
            lift(m.validate())?;
        }
        if self.baseline.budget == Some(0) {
            return Err(ConfigError::new("baseline.budget", "must be at least 1"));
        }
        Ok(())
    }
}

fn lift(r: uav_aou::Result<()>) -> Result<(), ConfigError> {
    r.map_err(|e| match e {
        uav_aou::Error::Invalid { field, reason } => {
            let field = if field.starts_with("ppo.") { format!("training.{field}") } else { field.to_string() };
            ConfigError::new(field, reason)
        }
        other => ConfigError::new("config", other.to_string()),
    })
}

/// Applies `key=value` overrides to a parsed document.
///
/// Keys are dotted paths; values are TOML literals, and anything that does
/// not parse as one is taken as a string.
pub fn apply_overrides(doc: &mut Table, overrides: &[String]) -> Result<(), ConfigError> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| ConfigError::new(item.clone(), "override must look like key=value"))?;
        let key = key.trim();
        let value = parse_literal(raw.trim());
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::new(key, "empty path segment"));
        }
        let mut table = &mut *doc;
        for part in &parts[..parts.len() - 1] {
            let entry = table.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
            table = entry.as_table_mut().ok_or_else(|| ConfigError::new(key, format!("`{part}` is not a table")))?;
        }
        table.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(())
}

fn parse_literal(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Parses, overrides, and resolves a config; `seed` replaces the file's seed.
pub fn load(text: &str, overrides: &[String], seed: Option<u64>) -> Result<ResolvedConfig, ConfigError> {
    let mut doc: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::new("config", e.to_string()))?;
    apply_overrides(&mut doc, overrides)?;
    if let Some(s) = seed {
        doc.insert("seed".into(), Value::Integer(s as i64));
    }
    let raw: RawConfig = RawConfig::deserialize(doc).map_err(|e| ConfigError::new("config", e.to_string()))?;
    resolve(raw)
}

fn resolve(raw: RawConfig) -> Result<ResolvedConfig, ConfigError> {
    let sc = raw.scenario.ok_or_else(|| ConfigError::new("scenario", "missing section [scenario]"))?;
    let scenario = resolve_scenario(sc)?;
    let mut training = raw.training;
    training.seed = raw.seed;
    let cfg = ResolvedConfig {
        algorithm: raw.algorithm,
        seed: raw.seed,
        scenario,
        training,
        meta: raw.meta,
        baseline: raw.baseline,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn required<T>(v: Option<T>, field: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| ConfigError::new(format!("scenario.{field}"), "missing required field"))
}

fn resolve_scenario(sc: ScenarioSection) -> Result<ScenarioConfig, ConfigError> {
    let seed = sc.seed.unwrap_or(0);
    let base = sc.preset.map(|p| match p {
        Preset::Tiny => presets::tiny(),
        Preset::Nominal => presets::nominal(seed),
        Preset::Desk => presets::desk(seed),
    });
    let grid = match (&base, sc.grid) {
        (_, Some(g)) => g,
        (Some(b), None) => b.grid,
        (None, None) => return Err(required::<Grid>(None, "grid").unwrap_err()),
    };
    let (devices, uavs) = match (sc.layout, sc.devices, sc.uavs) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(ConfigError::new("scenario.layout", "give either a layout or explicit devices and uavs"))
        }
        (Some(layout), None, None) => layout.generate(&grid, seed).map_err(|e| match e {
            uav_aou::env::EnvError::InvalidConfig { field, reason } => ConfigError::new(format!("scenario.{field}"), reason),
            other => ConfigError::new("scenario.layout", other.to_string()),
        })?,
        (None, devices, uavs) => {
            let devices = match (devices, &base) {
                (Some(d), _) => d,
                (None, Some(b)) => b.devices.clone(),
                (None, None) => required(None, "devices")?,
            };
            let uavs = match (uavs, &base) {
                (Some(u), _) => u,
                (None, Some(b)) => b.uavs.clone(),
                (None, None) => required(None, "uavs")?,
            };
            (devices, uavs)
        }
    };
    let pick = |v: Option<usize>, f: fn(&ScenarioConfig) -> usize, name: &str| match (v, &base) {
        (Some(v), _) => Ok(v),
        (None, Some(b)) => Ok(f(b)),
        (None, None) => required(None, name),
    };
    let horizon = pick(sc.horizon, |b| b.horizon, "horizon")?;
    let rate_min = match (sc.rate_min, &base) {
        (Some(v), _) => v,
        (None, Some(b)) => b.rate_min,
        (None, None) => required(None, "rate_min")?,
    };
    let weights = match (sc.weights, &base) {
        (Some(w), _) => w,
        (None, Some(b)) => b.weights,
        (None, None) => required(None, "weights")?,
    };
    Ok(ScenarioConfig {
        seed,
        horizon,
        rate_min,
        weights,
        normalization: sc.normalization.or(base.as_ref().map(|b| b.normalization)).unwrap_or_default(),
        grid,
        channel: sc.channel.or(base.as_ref().map(|b| b.channel.clone())).unwrap_or_default(),
        devices,
        uavs,
    })
}
