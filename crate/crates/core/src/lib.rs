//! Cooperative multi-UAV data collection under age-of-update objectives.
//!
//! The environment, the PPO machinery, centralized-critic training, meta-training
//! over mission variations, value-decomposition baselines and a brute-force
//! oracle all live here. The `uav-aou` binary wraps them.

pub mod baselines;
pub mod env;
pub mod mappo;
pub mod meta;
pub mod nn;
pub mod oracle;
pub mod ppo;
pub mod presets;
pub mod seed;

use env::EnvError;
use nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("instance exceeds oracle bounds: {0}")]
    Bounds(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Error::Invalid { field: field.to_string(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
