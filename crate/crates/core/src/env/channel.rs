//! Air-to-ground link model: geometry, Rician fading, and Shannon rate.

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{ChannelModel, DeviceConfig};
use super::EnvError;

/// Slant range between a UAV at `uav_xy` (altitude `altitude`) and a ground device.
pub fn distance(uav_xy: [f64; 2], altitude: f64, device_pos: [f64; 2]) -> f64 {
    let dx = uav_xy[0] - device_pos[0];
    let dy = uav_xy[1] - device_pos[1];
    (dx * dx + dy * dy + altitude * altitude).sqrt()
}

/// Squared magnitude of one Rician small-scale fading draw.
///
/// The line-of-sight component has unit magnitude and zero phase; the
/// scattered component is circularly-symmetric complex Gaussian with unit
/// variance, so the mean power is one for every `rician_factor`.
pub fn fading_power<R: Rng + ?Sized>(rician_factor: f64, rng: &mut R) -> f64 {
    let los = (rician_factor / (rician_factor + 1.0)).sqrt();
    let nlos = (1.0 / (rician_factor + 1.0)).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    let re = los + nlos * re * std::f64::consts::FRAC_1_SQRT_2;
    let im = nlos * im * std::f64::consts::FRAC_1_SQRT_2;
    re * re + im * im
}

/// Channel power gain `|h|^2 * beta0 * d^-alpha`.
pub fn channel_gain<R: Rng + ?Sized>(channel: &ChannelModel, distance: f64, rng: &mut R) -> Result<f64, EnvError> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(EnvError::Domain(format!("channel gain needs a positive distance, got {distance}")));
    }
    let fading = if channel.deterministic {
        1.0
    } else {
        fading_power(channel.rician_factor, rng)
    };
    Ok(fading * channel.beta0 * distance.powf(-channel.path_loss_exponent))
}

/// Achievable uplink rate in bits/s for `device` served from `uav_xy`.
///
/// A fading sample is always drawn (in stochastic mode) so the random stream
/// consumed per slot does not depend on device powers.
pub fn rate<R: Rng + ?Sized>(
    channel: &ChannelModel,
    device: &DeviceConfig,
    uav_xy: [f64; 2],
    altitude: f64,
    rng: &mut R,
) -> Result<f64, EnvError> {
    let d = distance(uav_xy, altitude, device.pos);
    let gain = channel_gain(channel, d, rng)?;
    Ok(shannon(device.bandwidth, device.power * gain / channel.noise_power))
}

pub(crate) fn shannon(bandwidth: f64, snr: f64) -> f64 {
    if snr <= 0.0 {
        return 0.0;
    }
    bandwidth * snr.ln_1p() / std::f64::consts::LN_2
}

/// Rate with unit fading at slant range `d`.
pub fn deterministic_rate(channel: &ChannelModel, device: &DeviceConfig, d: f64) -> f64 {
    let gain = channel.beta0 * d.powf(-channel.path_loss_exponent);
    shannon(device.bandwidth, device.power * gain / channel.noise_power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn det_channel() -> ChannelModel {
        ChannelModel { rician_factor: 10.0, beta0: 1.0, noise_power: 1e-15, path_loss_exponent: 2.0, deterministic: true }
    }

    fn device(power: f64) -> DeviceConfig {
        DeviceConfig { id: 0, pos: [0.0, 0.0], power, bandwidth: 1500.0 }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance([0.0, 0.0], 100.0, [0.0, 0.0]), 100.0);
        let d = distance([300.0, 400.0], 100.0, [0.0, 0.0]);
        assert!((d - 260000f64.sqrt()).abs() < 1e-12);
        assert!((d - 509.902).abs() < 1e-3);
    }

    #[test]
    fn deterministic_gain_is_pure_path_loss() {
        let mut rng = rng_from_seed(0);
        let g = channel_gain(&det_channel(), 100.0, &mut rng).unwrap();
        assert!((g - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn zero_distance_is_domain_error() {
        let mut rng = rng_from_seed(0);
        assert!(matches!(channel_gain(&det_channel(), 0.0, &mut rng), Err(EnvError::Domain(_))));
    }

    #[test]
    fn pure_los_limit() {
        let mut rng = rng_from_seed(5);
        for _ in 0..1000 {
            let p = fading_power(1e12, &mut rng);
            assert!((p - 1.0).abs() < 1e-5, "{p}");
        }
    }

    #[test]
    fn rayleigh_mean_power_is_one() {
        let mut rng = rng_from_seed(17);
        let n = 100_000;
        let mean = (0..n).map(|_| fading_power(0.0, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn rate_examples() {
        let mut rng = rng_from_seed(0);
        let ch = det_channel();
        assert_eq!(rate(&ch, &device(0.0), [0.0, 0.0], 100.0, &mut rng).unwrap(), 0.0);
        let r100 = rate(&ch, &device(1.0), [0.0, 0.0], 100.0, &mut rng).unwrap();
        let expected = 1500.0 * (1.0f64 + 1e11).log2();
        assert!((r100 - expected).abs() < 1e-9);
        assert!((r100 - 5.481e4).abs() < 5.0);
        let r200 = rate(&ch, &device(1.0), [0.0, 0.0], 200.0, &mut rng).unwrap();
        assert!(r200 < r100);
    }
}
