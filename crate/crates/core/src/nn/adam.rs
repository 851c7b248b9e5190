use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let n = params.num_scalars();
        Self { config, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Descends along the accumulated gradients. Refuses non-finite gradients.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<(), NnError> {
        let g = params.flat_grad();
        if g.len() != self.m.len() {
            return Err(NnError::Shape(format!("optimizer built for {} values, got {}", self.m.len(), g.len())));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFinite);
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut values = params.flat_values();
        for i in 0..g.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            values[i] -= lr * mh / (vh.sqrt() + eps);
        }
        params.set_flat_values(&values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn single(p: f64, g: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.push("p", Tensor::vector(vec![p]));
        ps.set_flat_grad(&[g]).unwrap();
        ps
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = single(1.0, 0.5);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &ps);
        opt.step(&mut ps).unwrap();
        // m_hat = g, v_hat = g^2 on the first step.
        let want = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((ps.flat_values()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn second_step_matches_hand_formula() {
        let mut ps = single(1.0, 0.5);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &ps);
        opt.step(&mut ps).unwrap();
        ps.set_flat_grad(&[-1.0]).unwrap();
        let p1 = ps.flat_values()[0];
        opt.step(&mut ps).unwrap();
        let m = 0.9 * (0.1 * 0.5) + 0.1 * -1.0;
        let v = 0.999 * (0.001 * 0.25) + 0.001 * 1.0;
        let mh = m / (1.0 - 0.81);
        let vh = v / (1.0 - 0.999f64.powi(2));
        let want = p1 - 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((ps.flat_values()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut ps = single(2.5, 0.0);
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        opt.step(&mut ps).unwrap();
        assert_eq!(ps.flat_values(), vec![2.5]);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut ps = single(1.0, f64::NAN);
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        assert!(matches!(opt.step(&mut ps), Err(NnError::NonFinite)));
        assert_eq!(ps.flat_values(), vec![1.0]);
    }
}
