//! Grid-world UAV data-collection environment.

mod channel;
mod config;
mod constraints;
mod dynamics;
mod trace;

pub use channel::{channel_gain, deterministic_rate, distance, fading_power, rate};
pub use config::{Cell, ChannelModel, DeviceConfig, Grid, LayoutSpec, Normalization, ScenarioConfig, UavConfig, Weights};
pub use constraints::{check_constraints, Check, ConstraintReport};
pub use dynamics::{
    aou_step, associate, flight_time, max_link_rate, Action, AssocMatrix, Environment, OrderedBits, RewardTerms,
    SlotInfo, StepResult, WorldState, NUM_ACTIONS,
};
pub use trace::{read_trace_csv, write_trace_csv, EpisodeTrace, SlotRecord, TraceRow, TRACE_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("invalid scenario field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("episode already finished")]
    EpisodeDone,
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
