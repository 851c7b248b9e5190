//! Proximal policy optimization pieces shared by the on-policy trainers.

mod buffer;
mod loss;
mod update;

pub use buffer::{gae, RolloutBuffer};
pub use loss::{
    actor_terms, argmax, clipped_surrogate, clipped_value_error, critic_term, entropy_of, policy_distribution,
    sample_action, softmax, ActorBatch, ActorTerms, CriticBatch,
};
pub use update::{evaluate_losses, update, update_multi, ActorCritic, LossValue, PpoOptim, TaskBatch, UpdateStats};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoHyper {
    pub clip: f64,
    pub value_clip: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Global gradient-norm cap per network; 0 disables.
    pub max_grad_norm: f64,
    /// The critic regresses returns divided by this.
    pub value_scale: f64,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self {
            clip: 0.2,
            value_clip: 0.2,
            entropy_coef: 0.01,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch: 64,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            max_grad_norm: 0.5,
            value_scale: 1.0,
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: &str| if ok { Ok(()) } else { Err(Error::invalid(field, reason)) };
        check(self.clip > 0.0 && self.clip < 1.0, "ppo.clip", "must lie in (0, 1)")?;
        check(self.value_clip > 0.0, "ppo.value_clip", "must be positive")?;
        check(self.entropy_coef >= 0.0, "ppo.entropy_coef", "must be nonnegative")?;
        check((0.0..=1.0).contains(&self.gamma), "ppo.gamma", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.gae_lambda), "ppo.gae_lambda", "must lie in [0, 1]")?;
        check(self.epochs >= 1, "ppo.epochs", "must be at least 1")?;
        check(self.minibatch >= 1, "ppo.minibatch", "must be at least 1")?;
        check(self.actor_lr >= 0.0 && self.actor_lr.is_finite(), "ppo.actor_lr", "must be finite and nonnegative")?;
        check(self.critic_lr >= 0.0 && self.critic_lr.is_finite(), "ppo.critic_lr", "must be finite and nonnegative")?;
        check(self.max_grad_norm >= 0.0, "ppo.max_grad_norm", "must be nonnegative")?;
        check(self.value_scale > 0.0 && self.value_scale.is_finite(), "ppo.value_scale", "must be positive")?;
        Ok(())
    }
}
