//! Post-hoc audit of an episode against the mission constraints.

use serde::{Deserialize, Serialize};

use super::dynamics::{flight_time, Environment};
use super::trace::EpisodeTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Check {
    pub violations: usize,
}

impl Check {
    pub fn ok(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// Every association meets the rate threshold.
    pub rate_threshold: Check,
    /// No device is served by more than one UAV in a slot.
    pub single_service: Check,
    /// Per-UAV flight time against the mission length.
    pub flight_times: Vec<f64>,
    pub mission_time_limit: f64,
    pub mission_time: Check,
    pub bounds_x: Check,
    pub bounds_y: Check,
    /// Final distance of each UAV to its final cell, meters.
    pub terminal_distance: Vec<f64>,
}

impl ConstraintReport {
    pub fn terminal_met(&self) -> bool {
        self.terminal_distance.iter().all(|&d| d == 0.0)
    }

    /// All hard constraints the environment enforces by construction.
    pub fn hard_ok(&self) -> bool {
        self.rate_threshold.ok() && self.single_service.ok() && self.bounds_x.ok() && self.bounds_y.ok()
    }
}

pub fn check_constraints(trace: &EpisodeTrace, env: &Environment) -> ConstraintReport {
    let s = env.scenario();
    let grid = s.grid;
    let mut rate_threshold = Check::default();
    let mut single_service = Check::default();
    let mut bounds_x = Check::default();
    let mut bounds_y = Check::default();

    for rec in &trace.slots {
        for i in 0..rec.assoc.devices() {
            if rec.assoc.row_sum(i) > 1 {
                single_service.violations += 1;
            }
            for u in 0..rec.assoc.uavs() {
                if rec.assoc.get(i, u) && rec.rates[i][u] < s.rate_min {
                    rate_threshold.violations += 1;
                }
            }
        }
        for c in &rec.uav_cells {
            if c.x >= grid.cols() {
                bounds_x.violations += 1;
            }
            if c.y >= grid.rows() {
                bounds_y.violations += 1;
            }
        }
    }

    let uavs = trace.slots.first().map_or(0, |r| r.uav_cells.len());
    let flight_times: Vec<f64> = (0..uavs)
        .map(|u| flight_time(&trace.path(u), grid.cell_size, s.uavs[u].speed))
        .collect();
    let mission_time_limit = s.horizon as f64 * env.slot_duration();
    let mission_time = Check {
        violations: flight_times.iter().filter(|&&t| t > mission_time_limit + 1e-9).count(),
    };
    let terminal_distance = trace
        .slots
        .last()
        .map(|r| env.terminal_distances(&r.uav_cells))
        .unwrap_or_default();

    ConstraintReport {
        rate_threshold,
        single_service,
        flight_times,
        mission_time_limit,
        mission_time,
        bounds_x,
        bounds_y,
        terminal_distance,
    }
}
