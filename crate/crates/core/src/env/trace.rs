//! Episode traces and their CSV export.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::Cell;
use super::dynamics::{AssocMatrix, Environment, RewardTerms, StepResult, WorldState};
use super::EnvError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub uav_cells: Vec<Cell>,
    pub assoc: AssocMatrix,
    pub rates: Vec<Vec<f64>>,
    pub aou: Vec<u32>,
    pub reward: f64,
    pub terms: RewardTerms,
    pub data_bits: f64,
}

/// Every slot of one episode; `slots[0]` is the reset state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub slots: Vec<SlotRecord>,
}

impl EpisodeTrace {
    pub fn start(state: &WorldState) -> Self {
        let devices = state.assoc.devices();
        let uavs = state.assoc.uavs();
        Self {
            slots: vec![SlotRecord {
                slot: state.slot,
                uav_cells: state.uav_cells.clone(),
                assoc: state.assoc.clone(),
                rates: vec![vec![0.0; uavs]; devices],
                aou: state.aou.clone(),
                reward: 0.0,
                terms: RewardTerms::default(),
                data_bits: 0.0,
            }],
        }
    }

    pub fn push(&mut self, step: &StepResult) {
        let s = &step.next_state;
        self.slots.push(SlotRecord {
            slot: s.slot,
            uav_cells: s.uav_cells.clone(),
            assoc: s.assoc.clone(),
            rates: step.info.rates.clone(),
            aou: s.aou.clone(),
            reward: step.reward,
            terms: step.terms,
            data_bits: step.info.data_bits,
        });
    }

    pub fn steps(&self) -> &[SlotRecord] {
        self.slots.get(1..).unwrap_or(&[])
    }

    pub fn total_reward(&self) -> f64 {
        self.steps().iter().map(|r| r.reward).sum()
    }

    pub fn total_aou(&self) -> u64 {
        self.steps().iter().flat_map(|r| r.aou.iter()).map(|&a| u64::from(a)).sum()
    }

    pub fn data_bits(&self) -> f64 {
        self.steps().iter().map(|r| r.data_bits).sum()
    }

    pub fn terminal_term(&self) -> f64 {
        self.steps().iter().map(|r| r.terms.terminal).sum()
    }

    /// Distinct devices served at least once.
    pub fn devices_served(&self) -> usize {
        let Some(first) = self.slots.first() else { return 0 };
        (0..first.assoc.devices())
            .filter(|&i| self.steps().iter().any(|r| r.assoc.is_served(i)))
            .count()
    }

    /// Path of one UAV including the start cell.
    pub fn path(&self, uav: usize) -> Vec<Cell> {
        self.slots.iter().map(|r| r.uav_cells[uav]).collect()
    }
}

pub const TRACE_HEADER: [&str; 8] = ["slot", "uav_id", "x", "y", "device_id_served", "rate", "reward", "total_aou"];

/// Writes one row per (slot, UAV) for slots `1..=T`.
///
/// `device_id_served` lists the devices served by that UAV separated by `;`
/// and `rate` is their summed rate. `reward` and `total_aou` are team-level
/// values repeated on each UAV row of a slot.
pub fn write_trace_csv<W: Write>(trace: &EpisodeTrace, env: &Environment, out: W) -> Result<(), EnvError> {
    let grid = env.scenario().grid;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for rec in trace.steps() {
        let total_aou: u64 = rec.aou.iter().map(|&a| u64::from(a)).sum();
        for (u, &cell) in rec.uav_cells.iter().enumerate() {
            let [x, y] = grid.center(cell);
            let served = rec.assoc.served_by(u);
            let rate: f64 = served.iter().map(|&i| rec.rates[i][u]).sum();
            let ids = served.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";");
            w.write_record([
                rec.slot.to_string(),
                u.to_string(),
                x.to_string(),
                y.to_string(),
                ids,
                rate.to_string(),
                rec.reward.to_string(),
                total_aou.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TraceRow {
    pub slot: usize,
    pub uav_id: usize,
    pub x: f64,
    pub y: f64,
    pub device_id_served: String,
    pub rate: f64,
    pub reward: f64,
    pub total_aou: u64,
}

pub fn read_trace_csv<R: std::io::Read>(input: R) -> Result<Vec<TraceRow>, EnvError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(EnvError::from)).collect()
}
