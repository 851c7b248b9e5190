//! Static scenario description and layout generation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::seed::SeedTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub id: usize,
    /// Ground position in meters.
    pub pos: [f64; 2],
    /// Transmit power in watts.
    pub power: f64,
    /// Allocated bandwidth in hertz.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavConfig {
    pub id: usize,
    pub altitude: f64,
    /// Charging and docking station, the start position.
    pub cds: [f64; 2],
    pub final_pos: [f64; 2],
    /// Cruise speed in m/s.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub rician_factor: f64,
    pub beta0: f64,
    pub noise_power: f64,
    #[serde(default = "default_path_loss")]
    pub path_loss_exponent: f64,
    #[serde(default)]
    pub deterministic: bool,
}

fn default_path_loss() -> f64 {
    2.0
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            rician_factor: 10.0,
            beta0: 1.0,
            noise_power: 1e-15,
            path_loss_exponent: 2.0,
            deterministic: false,
        }
    }
}

/// Rectangular service area split into square cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub x_max: f64,
    pub y_max: f64,
    pub cell_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl Grid {
    pub fn cols(&self) -> usize {
        (self.x_max / self.cell_size).round().max(1.0) as usize
    }

    pub fn rows(&self) -> usize {
        (self.y_max / self.cell_size).round().max(1.0) as usize
    }

    pub fn diagonal(&self) -> f64 {
        self.x_max.hypot(self.y_max)
    }

    /// Cell containing a point, clamped into the grid.
    pub fn cell_of(&self, pos: [f64; 2]) -> Cell {
        let cx = (pos[0] / self.cell_size).floor().max(0.0) as usize;
        let cy = (pos[1] / self.cell_size).floor().max(0.0) as usize;
        Cell::new(cx.min(self.cols() - 1), cy.min(self.rows() - 1))
    }

    pub fn center(&self, cell: Cell) -> [f64; 2] {
        [
            (cell.x as f64 + 0.5) * self.cell_size,
            (cell.y as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn contains(&self, pos: [f64; 2]) -> bool {
        (0.0..=self.x_max).contains(&pos[0]) && (0.0..=self.y_max).contains(&pos[1])
    }

    pub fn contains_cell(&self, cell: Cell) -> bool {
        cell.x < self.cols() && cell.y < self.rows()
    }
}

/// Objective weights for the data, age, and terminal-position terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub data: f64,
    pub aou: f64,
    pub terminal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Data term divided by the best single-link rate, age term by the horizon.
    #[default]
    Scaled,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub horizon: usize,
    pub rate_min: f64,
    pub weights: Weights,
    #[serde(default)]
    pub normalization: Normalization,
    pub grid: Grid,
    #[serde(default)]
    pub channel: ChannelModel,
    pub devices: Vec<DeviceConfig>,
    pub uavs: Vec<UavConfig>,
}

fn invalid(field: &str, reason: impl Into<String>) -> EnvError {
    EnvError::InvalidConfig {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn finite_nonneg(field: &str, v: f64) -> Result<(), EnvError> {
    if !v.is_finite() || v < 0.0 {
        return Err(invalid(field, format!("must be finite and >= 0, got {v}")));
    }
    Ok(())
}

fn finite_pos(field: &str, v: f64) -> Result<(), EnvError> {
    if !v.is_finite() || v <= 0.0 {
        return Err(invalid(field, format!("must be finite and > 0, got {v}")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.horizon < 1 {
            return Err(invalid("horizon", "must be >= 1"));
        }
        finite_nonneg("rate_min", self.rate_min)?;
        finite_nonneg("weights.data", self.weights.data)?;
        finite_nonneg("weights.aou", self.weights.aou)?;
        finite_nonneg("weights.terminal", self.weights.terminal)?;

        let g = &self.grid;
        finite_pos("grid.cell_size", g.cell_size)?;
        finite_pos("grid.x_max", g.x_max)?;
        finite_pos("grid.y_max", g.y_max)?;
        for (name, extent, n) in [("grid.x_max", g.x_max, g.cols()), ("grid.y_max", g.y_max, g.rows())] {
            if ((n as f64) * g.cell_size - extent).abs() > 1e-6 * extent {
                return Err(invalid(name, "must be a whole number of cells"));
            }
        }

        let c = &self.channel;
        finite_nonneg("channel.rician_factor", c.rician_factor)?;
        finite_pos("channel.beta0", c.beta0)?;
        finite_pos("channel.noise_power", c.noise_power)?;
        finite_pos("channel.path_loss_exponent", c.path_loss_exponent)?;

        if self.uavs.is_empty() {
            return Err(invalid("uavs", "at least one UAV is required"));
        }
        for (k, d) in self.devices.iter().enumerate() {
            if d.id != k {
                return Err(invalid("devices", format!("device ids must be 0..I in order, found {} at {k}", d.id)));
            }
            if !g.contains(d.pos) {
                return Err(invalid("devices.pos", format!("device {k} lies outside the grid")));
            }
            finite_nonneg("devices.power", d.power)?;
            finite_pos("devices.bandwidth", d.bandwidth)?;
        }
        for (k, u) in self.uavs.iter().enumerate() {
            if u.id != k {
                return Err(invalid("uavs", format!("UAV ids must be 0..U in order, found {} at {k}", u.id)));
            }
            finite_pos("uavs.altitude", u.altitude)?;
            finite_pos("uavs.speed", u.speed)?;
            if !g.contains(u.cds) {
                return Err(invalid("uavs.cds", format!("UAV {k} docking station lies outside the grid")));
            }
            if !g.contains(u.final_pos) {
                return Err(invalid("uavs.final_pos", format!("UAV {k} final position lies outside the grid")));
            }
        }
        Ok(())
    }
}

/// Random device layout with evenly spread UAV altitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    pub devices: usize,
    pub uavs: usize,
    #[serde(default = "default_altitudes")]
    pub altitude_range: [f64; 2],
    /// Powers are drawn from `(lo, hi]`.
    #[serde(default = "default_power")]
    pub power_range: [f64; 2],
    #[serde(default = "default_bandwidth")]
    pub bandwidth_range: [f64; 2],
    #[serde(default = "default_speed")]
    pub speed: f64,
    /// Shared docking station; grid center when omitted.
    #[serde(default)]
    pub cds: Option<[f64; 2]>,
    /// Shared final position; the docking station when omitted.
    #[serde(default)]
    pub final_pos: Option<[f64; 2]>,
}

fn default_altitudes() -> [f64; 2] {
    [80.0, 100.0]
}
fn default_power() -> [f64; 2] {
    [0.0, 1.0]
}
fn default_bandwidth() -> [f64; 2] {
    [1500.0, 1700.0]
}
fn default_speed() -> f64 {
    20.0
}

impl LayoutSpec {
    pub fn new(devices: usize, uavs: usize) -> Self {
        Self {
            devices,
            uavs,
            altitude_range: default_altitudes(),
            power_range: default_power(),
            bandwidth_range: default_bandwidth(),
            speed: default_speed(),
            cds: None,
            final_pos: None,
        }
    }

    pub fn generate(&self, grid: &Grid, seed: u64) -> Result<(Vec<DeviceConfig>, Vec<UavConfig>), EnvError> {
        for (name, r) in [
            ("layout.altitude_range", self.altitude_range),
            ("layout.power_range", self.power_range),
            ("layout.bandwidth_range", self.bandwidth_range),
        ] {
            if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] {
                return Err(invalid(name, format!("expected lo <= hi, got [{}, {}]", r[0], r[1])));
            }
        }
        if self.uavs == 0 {
            return Err(invalid("layout.uavs", "at least one UAV is required"));
        }
        let mut rng = SeedTree::new(seed).rng("layout", &[]);
        let devices = (0..self.devices)
            .map(|id| {
                let pos = [rng.random::<f64>() * grid.x_max, rng.random::<f64>() * grid.y_max];
                let [plo, phi] = self.power_range;
                let power = phi - rng.random::<f64>() * (phi - plo);
                let [blo, bhi] = self.bandwidth_range;
                let bandwidth = blo + rng.random::<f64>() * (bhi - blo);
                DeviceConfig { id, pos, power, bandwidth }
            })
            .collect();
        let cds = self.cds.unwrap_or([grid.x_max / 2.0, grid.y_max / 2.0]);
        let final_pos = self.final_pos.unwrap_or(cds);
        let [hlo, hhi] = self.altitude_range;
        let uavs = (0..self.uavs)
            .map(|id| {
                let altitude = if self.uavs == 1 {
                    0.5 * (hlo + hhi)
                } else {
                    hlo + (hhi - hlo) * id as f64 / (self.uavs - 1) as f64
                };
                UavConfig { id, altitude, cds, final_pos, speed: self.speed }
            })
            .collect();
        Ok((devices, uavs))
    }
}
