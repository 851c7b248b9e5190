//! Episode dynamics: movement, association, age recursion, and reward.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::channel;
use super::config::{Cell, Grid, Normalization, ScenarioConfig};
use super::EnvError;

pub const NUM_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Stay,
    Up,
    Down,
    Right,
    Left,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Stay, Action::Up, Action::Down, Action::Right, Action::Left];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Target cell, or the current cell when the move would leave the grid.
    pub fn apply(self, cell: Cell, grid: &Grid) -> Cell {
        let (cols, rows) = (grid.cols(), grid.rows());
        match self {
            Action::Stay => cell,
            Action::Up if cell.y + 1 < rows => Cell::new(cell.x, cell.y + 1),
            Action::Down if cell.y > 0 => Cell::new(cell.x, cell.y - 1),
            Action::Right if cell.x + 1 < cols => Cell::new(cell.x + 1, cell.y),
            Action::Left if cell.x > 0 => Cell::new(cell.x - 1, cell.y),
            _ => cell,
        }
    }

    /// Mirror across the vertical axis (left/right swap).
    pub fn mirror_x(self) -> Action {
        match self {
            Action::Right => Action::Left,
            Action::Left => Action::Right,
            a => a,
        }
    }
}

/// Binary device-by-UAV association matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssocMatrix {
    devices: usize,
    uavs: usize,
    data: Vec<u8>,
}

impl AssocMatrix {
    pub fn zeros(devices: usize, uavs: usize) -> Self {
        Self { devices, uavs, data: vec![0; devices * uavs] }
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn uavs(&self) -> usize {
        self.uavs
    }

    pub fn get(&self, device: usize, uav: usize) -> bool {
        self.data[device * self.uavs + uav] != 0
    }

    pub fn set(&mut self, device: usize, uav: usize, on: bool) {
        self.data[device * self.uavs + uav] = u8::from(on);
    }

    pub fn row_sum(&self, device: usize) -> usize {
        self.data[device * self.uavs..(device + 1) * self.uavs].iter().map(|&v| v as usize).sum()
    }

    pub fn is_served(&self, device: usize) -> bool {
        self.row_sum(device) > 0
    }

    /// Devices served by `uav`.
    pub fn served_by(&self, uav: usize) -> Vec<usize> {
        (0..self.devices).filter(|&i| self.get(i, uav)).collect()
    }

    pub fn served_count(&self) -> usize {
        (0..self.devices).filter(|&i| self.is_served(i)).count()
    }
}

/// Greedy max-rate association.
///
/// Every device whose best rate reaches `rate_min` is attached to that UAV;
/// ties go to the lowest UAV id. A UAV may serve several devices.
pub fn associate(rates: &[Vec<f64>], rate_min: f64, uavs: usize) -> AssocMatrix {
    let mut assoc = AssocMatrix::zeros(rates.len(), uavs);
    for (i, row) in rates.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (u, &r) in row.iter().enumerate() {
            if r >= rate_min && best.is_none_or(|(_, b)| r > b) {
                best = Some((u, r));
            }
        }
        if let Some((u, _)) = best {
            assoc.set(i, u, true);
        }
    }
    assoc
}

/// One slot of the per-device age recursion, `A[t] = (A[t-1] + 1)(1 - served[t-1])`.
pub fn aou_step(aou: &[u32], assoc_prev: &AssocMatrix) -> Vec<u32> {
    aou.iter()
        .enumerate()
        .map(|(i, &a)| if assoc_prev.is_served(i) { 0 } else { a + 1 })
        .collect()
}

/// Time to fly the visited cells in order at constant `speed`.
pub fn flight_time(visited: &[Cell], cell_size: f64, speed: f64) -> f64 {
    visited
        .windows(2)
        .map(|w| {
            let dx = w[1].x as f64 - w[0].x as f64;
            let dy = w[1].y as f64 - w[0].y as f64;
            dx.hypot(dy) * cell_size / speed
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    pub slot: usize,
    pub uav_cells: Vec<Cell>,
    pub aou: Vec<u32>,
    pub assoc: AssocMatrix,
    /// Bits collected so far; excluded from equality-sensitive keys by callers.
    pub cum_data: OrderedBits,
    pub done: bool,
}

/// Accumulated bits, stored as raw f64 bits so the state stays `Eq + Hash`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct OrderedBits(u64);

impl OrderedBits {
    pub fn new(v: f64) -> Self {
        Self(v.to_bits())
    }

    pub fn get(self) -> f64 {
        f64::from_bits(self.0)
    }
}

/// Unweighted reward components of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    /// Sum of served rates divided by the rate normalizer.
    pub data: f64,
    /// Sum of device ages divided by the age normalizer.
    pub age: f64,
    /// Sum over UAVs of distance to the final cell over the grid diagonal; nonzero only at the last slot.
    pub terminal: f64,
}

#[derive(Debug, Clone)]
pub struct SlotInfo {
    pub rates: Vec<Vec<f64>>,
    pub data_bits: f64,
    pub devices_served: usize,
    pub total_aou: u64,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_state: WorldState,
    pub reward: f64,
    pub terms: RewardTerms,
    pub per_uav_obs: Vec<Vec<f64>>,
    pub info: SlotInfo,
}

/// A validated scenario plus the constants derived from it.
#[derive(Debug, Clone)]
pub struct Environment {
    scenario: ScenarioConfig,
    slot_duration: f64,
    rate_norm: f64,
    aou_norm: f64,
    start_cells: Vec<Cell>,
    final_cells: Vec<Cell>,
}

impl Environment {
    pub fn new(scenario: ScenarioConfig) -> Result<Self, EnvError> {
        scenario.validate()?;
        let grid = scenario.grid;
        let speed = scenario.uavs.iter().map(|u| u.speed).fold(f64::INFINITY, f64::min);
        let (rate_norm, aou_norm) = match scenario.normalization {
            Normalization::Scaled => {
                let best = max_link_rate(&scenario);
                (if best > 0.0 { best } else { 1.0 }, scenario.horizon as f64)
            }
            Normalization::Raw => (1.0, 1.0),
        };
        let start_cells = scenario.uavs.iter().map(|u| grid.cell_of(u.cds)).collect();
        let final_cells = scenario.uavs.iter().map(|u| grid.cell_of(u.final_pos)).collect();
        Ok(Self {
            slot_duration: grid.cell_size / speed,
            rate_norm,
            aou_norm,
            start_cells,
            final_cells,
            scenario,
        })
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn num_uavs(&self) -> usize {
        self.scenario.uavs.len()
    }

    pub fn num_devices(&self) -> usize {
        self.scenario.devices.len()
    }

    pub fn horizon(&self) -> usize {
        self.scenario.horizon
    }

    /// One grid move at the slowest UAV speed.
    pub fn slot_duration(&self) -> f64 {
        self.slot_duration
    }

    pub fn rate_norm(&self) -> f64 {
        self.rate_norm
    }

    pub fn aou_norm(&self) -> f64 {
        self.aou_norm
    }

    pub fn final_cells(&self) -> &[Cell] {
        &self.final_cells
    }

    pub fn obs_dim(&self) -> usize {
        2 + self.num_uavs() + 1
    }

    pub fn global_state_dim(&self) -> usize {
        2 * self.num_uavs() + self.num_devices() + 1
    }

    pub fn reset(&self) -> (WorldState, Vec<Vec<f64>>) {
        let state = WorldState {
            slot: 0,
            uav_cells: self.start_cells.clone(),
            aou: vec![0; self.num_devices()],
            assoc: AssocMatrix::zeros(self.num_devices(), self.num_uavs()),
            cum_data: OrderedBits::default(),
            done: false,
        };
        let obs = self.local_obs(&state);
        (state, obs)
    }

    fn norm_coord(v: usize, n: usize) -> f64 {
        if n > 1 {
            v as f64 / (n - 1) as f64
        } else {
            0.0
        }
    }

    /// Local observation of each UAV: own normalized cell, one-hot id, and mission clock.
    pub fn local_obs(&self, state: &WorldState) -> Vec<Vec<f64>> {
        let grid = &self.scenario.grid;
        let u_count = self.num_uavs();
        let clock = state.slot as f64 / self.horizon() as f64;
        state
            .uav_cells
            .iter()
            .enumerate()
            .map(|(u, c)| {
                let mut v = Vec::with_capacity(self.obs_dim());
                v.push(Self::norm_coord(c.x, grid.cols()));
                v.push(Self::norm_coord(c.y, grid.rows()));
                v.extend((0..u_count).map(|k| if k == u { 1.0 } else { 0.0 }));
                v.push(clock);
                v
            })
            .collect()
    }

    /// Centralized state: all UAV positions, device ages, and the slot index, each in [0, 1].
    ///
    /// With `include_aou` off the age block is zero-filled so the dimension is unchanged.
    pub fn global_state(&self, state: &WorldState, include_aou: bool) -> Vec<f64> {
        let grid = &self.scenario.grid;
        let horizon = self.horizon() as f64;
        let mut v = Vec::with_capacity(self.global_state_dim());
        for c in &state.uav_cells {
            v.push(Self::norm_coord(c.x, grid.cols()));
            v.push(Self::norm_coord(c.y, grid.rows()));
        }
        for &a in &state.aou {
            v.push(if include_aou { a as f64 / horizon } else { 0.0 });
        }
        v.push(state.slot as f64 / horizon);
        v
    }

    /// Rates of every device towards every UAV at the given cells.
    pub fn rates<R: Rng + ?Sized>(&self, cells: &[Cell], rng: &mut R) -> Result<Vec<Vec<f64>>, EnvError> {
        let s = &self.scenario;
        let centers: Vec<[f64; 2]> = cells.iter().map(|&c| s.grid.center(c)).collect();
        s.devices
            .iter()
            .map(|d| {
                s.uavs
                    .iter()
                    .zip(&centers)
                    .map(|(u, &xy)| channel::rate(&s.channel, d, xy, u.altitude, rng))
                    .collect()
            })
            .collect()
    }

    /// Distance from each UAV's cell center to its final cell center.
    pub fn terminal_distances(&self, cells: &[Cell]) -> Vec<f64> {
        let grid = &self.scenario.grid;
        cells
            .iter()
            .zip(&self.final_cells)
            .map(|(&c, &f)| {
                let a = grid.center(c);
                let b = grid.center(f);
                (a[0] - b[0]).hypot(a[1] - b[1])
            })
            .collect()
    }

    pub fn combine(&self, terms: &RewardTerms) -> f64 {
        let w = &self.scenario.weights;
        w.data * terms.data - w.aou * terms.age - w.terminal * terms.terminal
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &WorldState, actions: &[Action], rng: &mut R) -> Result<StepResult, EnvError> {
        if state.done {
            return Err(EnvError::EpisodeDone);
        }
        if actions.len() != self.num_uavs() {
            return Err(EnvError::ActionCount { expected: self.num_uavs(), got: actions.len() });
        }
        let s = &self.scenario;
        let cells: Vec<Cell> = state
            .uav_cells
            .iter()
            .zip(actions)
            .map(|(&c, a)| a.apply(c, &s.grid))
            .collect();
        let rates = self.rates(&cells, rng)?;
        let aou = aou_step(&state.aou, &state.assoc);
        let assoc = associate(&rates, s.rate_min, self.num_uavs());

        let mut served_rate = 0.0;
        for (i, row) in rates.iter().enumerate() {
            for (u, &r) in row.iter().enumerate() {
                if assoc.get(i, u) {
                    served_rate += r;
                }
            }
        }
        let total_aou: u64 = aou.iter().map(|&a| u64::from(a)).sum();
        let slot = state.slot + 1;
        let done = slot == s.horizon;
        let terminal = if done {
            self.terminal_distances(&cells).iter().sum::<f64>() / s.grid.diagonal()
        } else {
            0.0
        };
        let terms = RewardTerms {
            data: served_rate / self.rate_norm,
            age: total_aou as f64 / self.aou_norm,
            terminal,
        };
        let data_bits = served_rate * self.slot_duration;
        let devices_served = assoc.served_count();
        let next_state = WorldState {
            slot,
            uav_cells: cells,
            aou,
            assoc,
            cum_data: OrderedBits::new(state.cum_data.get() + data_bits),
            done,
        };
        let per_uav_obs = self.local_obs(&next_state);
        Ok(StepResult {
            reward: self.combine(&terms),
            terms,
            per_uav_obs,
            info: SlotInfo { rates, data_bits, devices_served, total_aou },
            next_state,
        })
    }
}

/// Best deterministic single-link rate: each device directly below each UAV.
pub fn max_link_rate(s: &ScenarioConfig) -> f64 {
    s.devices
        .iter()
        .flat_map(|d| s.uavs.iter().map(move |u| channel::deterministic_rate(&s.channel, d, u.altitude)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::config::{ChannelModel, DeviceConfig, UavConfig, Weights};
    use crate::seed::rng_from_seed;

    fn scenario(devices: Vec<DeviceConfig>, uavs: usize, weights: Weights, rate_min: f64) -> ScenarioConfig {
        ScenarioConfig {
            seed: 0,
            horizon: 4,
            rate_min,
            weights,
            normalization: Normalization::Scaled,
            grid: Grid { x_max: 600.0, y_max: 600.0, cell_size: 200.0 },
            channel: ChannelModel { deterministic: true, ..ChannelModel::default() },
            devices,
            uavs: (0..uavs)
                .map(|id| UavConfig { id, altitude: 100.0, cds: [100.0, 100.0], final_pos: [100.0, 100.0], speed: 20.0 })
                .collect(),
        }
    }

    #[test]
    fn association_examples() {
        let none = associate(&[vec![1.0, 2.0]], 10.0, 2);
        assert_eq!(none.served_count(), 0);

        let a = associate(&[vec![5e4, 6e4]], 1e4, 2);
        assert!(a.get(0, 1) && !a.get(0, 0));

        let tie = associate(&[vec![6e4, 6e4]], 1e4, 2);
        assert!(tie.get(0, 0) && !tie.get(0, 1));

        let shared = associate(&[vec![5e4, 0.0], vec![5e4, 0.0]], 1e4, 2);
        assert!(shared.get(0, 0) && shared.get(1, 0));
        assert_eq!(shared.served_by(0), vec![0, 1]);
    }

    #[test]
    fn aou_examples() {
        let idle = AssocMatrix::zeros(1, 1);
        let mut served = AssocMatrix::zeros(1, 1);
        served.set(0, 0, true);
        assert_eq!(aou_step(&[0], &idle), vec![1]);
        assert_eq!(aou_step(&[7], &served), vec![0]);

        // Pattern entries are the previous-slot associations feeding each update.
        let mut a = vec![0];
        let mut ages = Vec::new();
        for serve in [false, false, true, false] {
            let prev = if serve { &served } else { &idle };
            a = aou_step(&a, prev);
            ages.push(a[0]);
        }
        assert_eq!(ages, vec![1, 2, 0, 1]);
    }

    #[test]
    fn flight_time_examples() {
        assert_eq!(flight_time(&[Cell::new(1, 1)], 200.0, 20.0), 0.0);
        assert_eq!(flight_time(&[Cell::new(0, 0), Cell::new(1, 0)], 200.0, 20.0), 10.0);
        let l = [Cell::new(0, 0), Cell::new(1, 0), Cell::new(1, 1)];
        assert_eq!(flight_time(&l, 200.0, 20.0), 20.0);
        let stay = [Cell::new(0, 0), Cell::new(0, 0)];
        assert_eq!(flight_time(&stay, 200.0, 20.0), 0.0);
    }

    #[test]
    fn clamped_moves_at_edges() {
        let g = Grid { x_max: 600.0, y_max: 600.0, cell_size: 200.0 };
        let corner = Cell::new(0, 0);
        assert_eq!(Action::Left.apply(corner, &g), corner);
        assert_eq!(Action::Down.apply(corner, &g), corner);
        let far = Cell::new(2, 2);
        assert_eq!(Action::Right.apply(far, &g), far);
        assert_eq!(Action::Up.apply(far, &g), far);
        assert_eq!(Action::Up.apply(corner, &g), Cell::new(0, 1));
    }

    #[test]
    fn idle_slot_penalizes_every_device() {
        let devices = (0..3)
            .map(|id| DeviceConfig { id, pos: [550.0, 550.0], power: 1.0, bandwidth: 1500.0 })
            .collect();
        let w = Weights { data: 0.3, aou: 0.7, terminal: 0.0 };
        let env = Environment::new(scenario(devices, 1, w, 1e9)).unwrap();
        let (s0, _) = env.reset();
        let mut rng = rng_from_seed(0);
        let res = env.step(&s0, &[Action::Stay], &mut rng).unwrap();
        assert_eq!(res.next_state.aou, vec![1, 1, 1]);
        let expected = -0.7 * 3.0 / env.aou_norm();
        assert!((res.reward - expected).abs() < 1e-12);
    }

    #[test]
    fn served_device_earns_data_weight() {
        // Device directly below the start cell: its rate equals the normalizer.
        let devices = vec![DeviceConfig { id: 0, pos: [100.0, 100.0], power: 1.0, bandwidth: 1500.0 }];
        let w = Weights { data: 0.3, aou: 0.7, terminal: 0.0 };
        let env = Environment::new(scenario(devices, 1, w, 1e4)).unwrap();
        assert!((env.rate_norm() - 5.481e4).abs() < 5.0);
        let mut rng = rng_from_seed(0);
        let (s0, _) = env.reset();
        let r1 = env.step(&s0, &[Action::Stay], &mut rng).unwrap();
        // First slot still carries the age of the unserved reset slot.
        assert!((r1.reward - (0.3 - 0.7 / env.aou_norm())).abs() < 1e-12);
        let r2 = env.step(&r1.next_state, &[Action::Stay], &mut rng).unwrap();
        assert!((r2.reward - 0.3).abs() < 1e-12);
        assert_eq!(r2.info.devices_served, 1);
    }

    #[test]
    fn stepping_done_episode_fails() {
        let w = Weights { data: 1.0, aou: 1.0, terminal: 1.0 };
        let env = Environment::new(scenario(vec![], 1, w, 0.0)).unwrap();
        let (mut s, _) = env.reset();
        let mut rng = rng_from_seed(0);
        for _ in 0..4 {
            s = env.step(&s, &[Action::Up], &mut rng).unwrap().next_state;
        }
        assert!(s.done);
        assert!(matches!(env.step(&s, &[Action::Stay], &mut rng), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn terminal_penalty_only_on_last_slot() {
        let w = Weights { data: 0.0, aou: 0.0, terminal: 1.0 };
        let env = Environment::new(scenario(vec![], 1, w, 0.0)).unwrap();
        let (mut s, _) = env.reset();
        let mut rng = rng_from_seed(0);
        let mut rewards = Vec::new();
        for _ in 0..4 {
            let r = env.step(&s, &[Action::Up], &mut rng).unwrap();
            rewards.push(r.reward);
            s = r.next_state;
        }
        assert_eq!(&rewards[..3], &[0.0, 0.0, 0.0]);
        // Ends two cells above the final cell on a 3x3 grid of 200 m cells.
        let expected = -(400.0 / 600f64.hypot(600.0));
        assert!((rewards[3] - expected).abs() < 1e-12);
    }

    #[test]
    fn wrong_action_count_rejected() {
        let w = Weights { data: 1.0, aou: 1.0, terminal: 1.0 };
        let env = Environment::new(scenario(vec![], 2, w, 0.0)).unwrap();
        let (s, _) = env.reset();
        let mut rng = rng_from_seed(0);
        assert!(matches!(env.step(&s, &[Action::Stay], &mut rng), Err(EnvError::ActionCount { .. })));
    }
}
