//! Ready-made scenarios.

use crate::env::{ChannelModel, DeviceConfig, Grid, LayoutSpec, Normalization, ScenarioConfig, UavConfig, Weights};

pub const NOMINAL_WEIGHTS: Weights = Weights { data: 0.3, aou: 0.3, terminal: 0.4 };

/// 3x3 grid, one UAV, two devices, five slots, deterministic channel.
///
/// A device is only served from directly above it; the mission ends over device 1.
pub fn tiny() -> ScenarioConfig {
    let grid = Grid { x_max: 600.0, y_max: 600.0, cell_size: 200.0 };
    let device = |id, pos| DeviceConfig { id, pos, power: 1.0, bandwidth: 1500.0 };
    ScenarioConfig {
        seed: 0,
        horizon: 5,
        rate_min: 5.3e4,
        weights: NOMINAL_WEIGHTS,
        normalization: Normalization::Scaled,
        grid,
        channel: ChannelModel { deterministic: true, ..ChannelModel::default() },
        devices: vec![device(0, [300.0, 500.0]), device(1, [500.0, 300.0])],
        uavs: vec![UavConfig { id: 0, altitude: 100.0, cds: [300.0, 300.0], final_pos: [500.0, 300.0], speed: 20.0 }],
    }
}

fn layout_scenario(seed: u64, layout: LayoutSpec, channel: ChannelModel, rate_min: f64) -> ScenarioConfig {
    let grid = Grid { x_max: 1000.0, y_max: 1000.0, cell_size: 200.0 };
    let (devices, uavs) = layout.generate(&grid, seed).expect("preset layout is valid");
    ScenarioConfig {
        seed,
        horizon: 100,
        rate_min,
        weights: NOMINAL_WEIGHTS,
        normalization: Normalization::Scaled,
        grid,
        channel,
        devices,
        uavs,
    }
}

/// Nominal parameters: I=20, U=3, T=100, B in [1500, 1700] Hz, noise 1e-15 W.
///
/// With these numbers no link reaches the 1e5 bit/s threshold.
pub fn nominal(seed: u64) -> ScenarioConfig {
    layout_scenario(seed, LayoutSpec::new(20, 3), ChannelModel::default(), 1e5)
}

/// Channel used by [`desk`]: Rician fading, low-SNR operating point.
pub fn desk_channel() -> ChannelModel {
    ChannelModel { noise_power: 5e-6, ..ChannelModel::default() }
}

/// Nominal geometry with kHz-scale bandwidths replaced by 150-170 kHz and a
/// channel under which coverage depends on device power: high-power devices
/// reach the 1e5 bit/s threshold from a few cells away, low-power ones only
/// from nearby.
pub fn desk(seed: u64) -> ScenarioConfig {
    let layout = LayoutSpec { bandwidth_range: [1.5e5, 1.7e5], ..LayoutSpec::new(20, 3) };
    layout_scenario(seed, layout, desk_channel(), 1e5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{deterministic_rate, max_link_rate, Environment};

    #[test]
    fn presets_validate() {
        for s in [tiny(), nominal(1), desk(1)] {
            Environment::new(s).unwrap();
        }
    }

    #[test]
    fn nominal_threshold_unreachable() {
        let s = nominal(3);
        assert!(max_link_rate(&s) < s.rate_min);
    }

    #[test]
    fn tiny_coverage_is_one_cell() {
        let s = tiny();
        let d = &s.devices[0];
        let above = deterministic_rate(&s.channel, d, 100.0);
        let adjacent = deterministic_rate(&s.channel, d, (200f64.powi(2) + 100f64.powi(2)).sqrt());
        assert!(above >= s.rate_min && adjacent < s.rate_min);
    }

    #[test]
    fn desk_has_servable_devices() {
        let s = desk(1);
        let servable = s
            .devices
            .iter()
            .filter(|d| s.uavs.iter().any(|u| deterministic_rate(&s.channel, d, u.altitude) >= s.rate_min))
            .count();
        assert!(servable >= 10, "{servable}");
    }
}
