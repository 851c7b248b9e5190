//! Exact optimum of tiny deterministic instances by memoized enumeration.

use std::collections::HashMap;

use serde::Serialize;

use crate::env::{Action, AssocMatrix, Cell, EpisodeTrace, Environment, ScenarioConfig, WorldState, NUM_ACTIONS};
use crate::mappo::{evaluate, EvalMode};
use crate::nn::Mlp;
use crate::seed::{rng_from_seed, Rng};
use crate::{Error, Result};

pub const MAX_GRID_SIDE: usize = 4;
pub const MAX_UAVS: usize = 2;
pub const MAX_HORIZON: usize = 6;

/// Rejects instances the enumeration is not meant for.
pub fn check_bounds(s: &ScenarioConfig) -> Result<()> {
    let mut problems = Vec::new();
    if s.grid.cols() > MAX_GRID_SIDE || s.grid.rows() > MAX_GRID_SIDE {
        problems.push(format!(
            "grid {}x{} exceeds {MAX_GRID_SIDE}x{MAX_GRID_SIDE}",
            s.grid.cols(),
            s.grid.rows()
        ));
    }
    if s.uavs.len() > MAX_UAVS {
        problems.push(format!("{} UAVs exceed {MAX_UAVS}", s.uavs.len()));
    }
    if s.horizon > MAX_HORIZON {
        problems.push(format!("horizon {} exceeds {MAX_HORIZON}", s.horizon));
    }
    if !s.channel.deterministic {
        problems.push("channel must be deterministic".into());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Bounds(problems.join("; ")))
    }
}

/// Memo key: everything that influences future rewards.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Key {
    slot: usize,
    cells: Vec<Cell>,
    aou: Vec<u32>,
    assoc: AssocMatrix,
}

impl Key {
    fn of(s: &WorldState) -> Self {
        Self { slot: s.slot, cells: s.uav_cells.clone(), aou: s.aou.clone(), assoc: s.assoc.clone() }
    }
}

fn joint_actions(uavs: usize) -> Vec<Vec<Action>> {
    let total = NUM_ACTIONS.pow(uavs as u32);
    (0..total)
        .map(|mut k| {
            (0..uavs)
                .map(|_| {
                    let a = Action::ALL[k % NUM_ACTIONS];
                    k /= NUM_ACTIONS;
                    a
                })
                .collect()
        })
        .collect()
}

struct Search<'a> {
    env: &'a Environment,
    joint: Vec<Vec<Action>>,
    rng: Rng,
    best: HashMap<Key, (f64, usize)>,
    mean: HashMap<Key, f64>,
}

impl<'a> Search<'a> {
    fn new(env: &'a Environment) -> Self {
        Self {
            env,
            joint: joint_actions(env.num_uavs()),
            rng: rng_from_seed(0),
            best: HashMap::new(),
            mean: HashMap::new(),
        }
    }

    fn best(&mut self, s: &WorldState) -> Result<f64> {
        if s.done {
            return Ok(0.0);
        }
        let key = Key::of(s);
        if let Some(&(v, _)) = self.best.get(&key) {
            return Ok(v);
        }
        let mut top = (f64::NEG_INFINITY, 0);
        for j in 0..self.joint.len() {
            let step = self.env.step(s, &self.joint[j], &mut self.rng)?;
            let v = step.reward + self.best(&step.next_state)?;
            if v > top.0 {
                top = (v, j);
            }
        }
        self.best.insert(key, top);
        Ok(top.0)
    }

    fn uniform(&mut self, s: &WorldState) -> Result<f64> {
        if s.done {
            return Ok(0.0);
        }
        let key = Key::of(s);
        if let Some(&v) = self.mean.get(&key) {
            return Ok(v);
        }
        let mut acc = 0.0;
        for j in 0..self.joint.len() {
            let step = self.env.step(s, &self.joint[j], &mut self.rng)?;
            acc += step.reward + self.uniform(&step.next_state)?;
        }
        let v = acc / self.joint.len() as f64;
        self.mean.insert(key, v);
        Ok(v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SlotBreakdown {
    pub slot: usize,
    pub actions: Vec<usize>,
    pub cells: Vec<[usize; 2]>,
    pub served: Vec<Vec<usize>>,
    pub data_term: f64,
    pub age_term: f64,
    pub terminal_term: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSolution {
    pub optimal_return: f64,
    /// Joint action indices per slot.
    pub trajectory: Vec<Vec<usize>>,
    pub slots: Vec<SlotBreakdown>,
    #[serde(skip)]
    pub trace: EpisodeTrace,
}

/// Replays a joint action sequence from reset.
pub fn replay(env: &Environment, actions: &[Vec<Action>]) -> Result<EpisodeTrace> {
    let mut rng = rng_from_seed(0);
    let (mut state, _) = env.reset();
    let mut trace = EpisodeTrace::start(&state);
    for a in actions {
        let step = env.step(&state, a, &mut rng)?;
        trace.push(&step);
        state = step.next_state;
    }
    Ok(trace)
}

/// Optimal team return and one optimal joint trajectory.
pub fn solve(scenario: &ScenarioConfig) -> Result<OracleSolution> {
    if scenario.horizon == 0 {
        return Ok(OracleSolution { optimal_return: 0.0, trajectory: Vec::new(), slots: Vec::new(), trace: EpisodeTrace::default() });
    }
    check_bounds(scenario)?;
    let env = Environment::new(scenario.clone())?;
    let mut search = Search::new(&env);
    let (mut state, _) = env.reset();
    let value = search.best(&state)?;

    let mut rng = rng_from_seed(0);
    let mut trace = EpisodeTrace::start(&state);
    let mut trajectory = Vec::new();
    let mut slots = Vec::new();
    while !state.done {
        let (_, j) = search.best[&Key::of(&state)];
        let joint = search.joint[j].clone();
        let step = env.step(&state, &joint, &mut rng)?;
        trace.push(&step);
        let s = &step.next_state;
        slots.push(SlotBreakdown {
            slot: s.slot,
            actions: joint.iter().map(|a| a.index()).collect(),
            cells: s.uav_cells.iter().map(|c| [c.x, c.y]).collect(),
            served: (0..env.num_uavs()).map(|u| s.assoc.served_by(u)).collect(),
            data_term: step.terms.data,
            age_term: step.terms.age,
            terminal_term: step.terms.terminal,
            reward: step.reward,
        });
        trajectory.push(joint.iter().map(|a| a.index()).collect());
        state = step.next_state;
    }
    Ok(OracleSolution { optimal_return: value, trajectory, slots, trace })
}

/// Exact expected return of the uniform random joint policy.
pub fn uniform_expected_return(scenario: &ScenarioConfig) -> Result<f64> {
    check_bounds(scenario)?;
    let env = Environment::new(scenario.clone())?;
    let mut search = Search::new(&env);
    let (state, _) = env.reset();
    search.uniform(&state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapReport {
    pub policy_return: f64,
    pub optimal_return: f64,
    pub ratio: f64,
}

/// Greedy rollout of `actor` against the optimum.
pub fn enumerate_check(scenario: &ScenarioConfig, actor: &Mlp) -> Result<GapReport> {
    let sol = solve(scenario)?;
    let env = Environment::new(scenario.clone())?;
    let report = evaluate(actor, &env, 1, EvalMode::Argmax, 0)?;
    Ok(gap(report.mean.reward, sol.optimal_return))
}

pub fn gap(policy_return: f64, optimal_return: f64) -> GapReport {
    GapReport { policy_return, optimal_return, ratio: policy_return / optimal_return }
}

/// Team return of UAV paths recomputed from closed-form expressions only.
///
/// `paths[u]` lists the cells of UAV `u` for slots `0..=T`. Rates, association,
/// ages and normalizers are evaluated from their definitions under a
/// deterministic channel; no environment code is used.
pub fn direct_return(s: &ScenarioConfig, paths: &[Vec<Cell>]) -> Vec<f64> {
    let t_max = s.horizon;
    let ch = &s.channel;
    let g = s.grid.cell_size;
    let rate = |d: &crate::env::DeviceConfig, cell: Cell, h: f64| {
        let cx = (cell.x as f64 + 0.5) * g;
        let cy = (cell.y as f64 + 0.5) * g;
        let dist2 = (cx - d.pos[0]).powi(2) + (cy - d.pos[1]).powi(2) + h * h;
        let snr = d.power * ch.beta0 * dist2.powf(-ch.path_loss_exponent / 2.0) / ch.noise_power;
        d.bandwidth * (1.0 + snr).log2()
    };
    let (r_norm, a_norm) = match s.normalization {
        crate::env::Normalization::Raw => (1.0, 1.0),
        crate::env::Normalization::Scaled => {
            let mut best: f64 = 0.0;
            for d in &s.devices {
                for u in &s.uavs {
                    let snr = d.power * ch.beta0 * u.altitude.powf(-ch.path_loss_exponent) / ch.noise_power;
                    best = best.max(d.bandwidth * (1.0 + snr).log2());
                }
            }
            (if best > 0.0 { best } else { 1.0 }, t_max as f64)
        }
    };
    let diag = (s.grid.x_max.powi(2) + s.grid.y_max.powi(2)).sqrt();
    // Slot of the latest service of each device, if any.
    let mut last_served: Vec<Option<usize>> = vec![None; s.devices.len()];
    let mut rewards = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        // Age closed form: slots since the last service strictly before t.
        let age_sum: f64 = last_served.iter().map(|l| l.map_or(t, |k| t - k - 1) as f64).sum();
        let mut data = 0.0;
        for (i, d) in s.devices.iter().enumerate() {
            let mut best: Option<(f64, usize)> = None;
            for (u, uav) in s.uavs.iter().enumerate() {
                let r = rate(d, paths[u][t], uav.altitude);
                if r >= s.rate_min && best.is_none_or(|(b, _)| r > b) {
                    best = Some((r, u));
                }
            }
            if let Some((r, _)) = best {
                data += r;
                last_served[i] = Some(t);
            }
        }
        let mut reward = s.weights.data * data / r_norm - s.weights.aou * age_sum / a_norm;
        if t == t_max {
            let mut dist = 0.0;
            for (u, uav) in s.uavs.iter().enumerate() {
                let c = paths[u][t];
                let fx = ((uav.final_pos[0] / g).floor().min(s.grid.cols() as f64 - 1.0) + 0.5) * g;
                let fy = ((uav.final_pos[1] / g).floor().min(s.grid.rows() as f64 - 1.0) + 0.5) * g;
                dist += ((c.x as f64 + 0.5) * g - fx).hypot((c.y as f64 + 0.5) * g - fy);
            }
            reward -= s.weights.terminal * dist / diag;
        }
        rewards.push(reward);
    }
    rewards
}
