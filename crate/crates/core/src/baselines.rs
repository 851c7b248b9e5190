//! Off-policy value-decomposition comparators: additive (VDN-style) and
//! monotonic hypernetwork (QMIX-style) mixing of per-agent action values.

use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EpisodeTrace, Environment, ScenarioConfig, NUM_ACTIONS};
use crate::mappo::{EpisodeStats, MetricsRecord};
use crate::nn::{Adam, AdamConfig, Mlp, ParamSet, Tape, Tensor, Var};
use crate::ppo::{argmax, entropy_of};
use crate::seed::{Rng, SeedTree};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerMode {
    Additive,
    Monotonic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixerConfig {
    pub mode: MixerMode,
    pub hidden: Vec<usize>,
    /// Width of the monotonic mixing layer.
    pub mixing_dim: usize,
    /// Environment steps between hard target copies.
    pub target_update_period: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the budget over which epsilon decays linearly.
    pub epsilon_fraction: f64,
    pub gamma: f64,
    pub lr: f64,
    pub batch: usize,
    pub capacity: usize,
    /// Environment steps between gradient updates.
    pub train_every: usize,
    /// Rewards are multiplied by this before entering TD targets.
    pub reward_scale: f64,
    pub max_grad_norm: f64,
    /// Episodes aggregated into one metrics row.
    pub episodes_per_row: usize,
    pub seed: u64,
}

impl Default for MixerConfig {
    fn default() -> Self {
        Self {
            mode: MixerMode::Additive,
            hidden: vec![64, 64],
            mixing_dim: 32,
            target_update_period: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.5,
            gamma: 0.99,
            lr: 5e-4,
            batch: 64,
            capacity: 5000,
            train_every: 4,
            reward_scale: 1.0,
            max_grad_norm: 10.0,
            episodes_per_row: 8,
            seed: 0,
        }
    }
}

impl MixerConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, f: &str, r: &str| if ok { Ok(()) } else { Err(Error::invalid(f, r)) };
        check(!self.hidden.contains(&0), "baseline.hidden", "layer widths must be positive")?;
        check(self.mixing_dim >= 1, "baseline.mixing_dim", "must be at least 1")?;
        check(self.target_update_period >= 1, "baseline.target_update_period", "must be at least 1")?;
        for (f, v) in [("baseline.epsilon_start", self.epsilon_start), ("baseline.epsilon_end", self.epsilon_end)] {
            check((0.0..=1.0).contains(&v), f, "must lie in [0, 1]")?;
        }
        check(self.epsilon_fraction > 0.0 && self.epsilon_fraction <= 1.0, "baseline.epsilon_fraction", "must lie in (0, 1]")?;
        check((0.0..=1.0).contains(&self.gamma), "baseline.gamma", "must lie in [0, 1]")?;
        check(self.lr >= 0.0 && self.lr.is_finite(), "baseline.lr", "must be finite and nonnegative")?;
        check(self.batch >= 1, "baseline.batch", "must be at least 1")?;
        check(self.capacity >= self.batch, "baseline.capacity", "must hold at least one batch")?;
        check(self.train_every >= 1, "baseline.train_every", "must be at least 1")?;
        check(self.reward_scale > 0.0, "baseline.reward_scale", "must be positive")?;
        check(self.episodes_per_row >= 1, "baseline.episodes_per_row", "must be at least 1")?;
        Ok(())
    }

    /// Exploration rate after `step` of `budget` environment steps.
    pub fn epsilon(&self, step: usize, budget: usize) -> f64 {
        let horizon = (self.epsilon_fraction * budget as f64).max(1.0);
        let frac = (step as f64 / horizon).min(1.0);
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

/// Per-agent action values from the shared agent network.
pub fn q_values(agent: &Mlp, local_state: &[f64]) -> Result<Vec<f64>> {
    Ok(agent.forward(local_state)?)
}

/// Greedy action; the lowest index wins ties.
pub fn greedy(q: &[f64]) -> usize {
    argmax(q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    pub done: bool,
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: VecDeque::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, k: usize) -> &Transition {
        &self.items[k]
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}

/// Team-value mixer. The monotonic form keeps every mixing weight nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixer {
    pub mode: MixerMode,
    agents: usize,
    mixing_dim: usize,
    nets: Vec<Mlp>,
}

impl Mixer {
    pub fn new(mode: MixerMode, agents: usize, state_dim: usize, mixing_dim: usize, rng: &mut Rng) -> Result<Self> {
        let nets = match mode {
            MixerMode::Additive => Vec::new(),
            MixerMode::Monotonic => {
                let e = mixing_dim;
                vec![
                    Mlp::new(&[state_dim, agents * e], 1.0, 1.0, rng)?,
                    Mlp::new(&[state_dim, e], 1.0, 1.0, rng)?,
                    Mlp::new(&[state_dim, e], 1.0, 1.0, rng)?,
                    Mlp::new(&[state_dim, e, 1], 2f64.sqrt(), 1.0, rng)?,
                ]
            }
        };
        Ok(Self { mode, agents, mixing_dim, nets })
    }

    pub fn nets(&self) -> &[Mlp] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [Mlp] {
        &mut self.nets
    }

    /// Records `Q_team` for a batch: `q [n, U]`, `states [n, S]` -> `[n]`.
    pub fn mix_on(&self, tape: &mut Tape, vars: &[Vec<Var>], q: Var, states: Var) -> Result<Var> {
        let n = tape.value(q).rows();
        match self.mode {
            MixerMode::Additive => Ok(tape.sum_rows(q)?),
            MixerMode::Monotonic => {
                let w1_raw = self.nets[0].forward_on(tape, &vars[0], states)?;
                let w1 = tape.abs(w1_raw);
                let b1 = self.nets[1].forward_on(tape, &vars[1], states)?;
                let w2_raw = self.nets[2].forward_on(tape, &vars[2], states)?;
                let w2 = tape.abs(w2_raw);
                let b2 = self.nets[3].forward_on(tape, &vars[3], states)?;
                let z = tape.row_bilinear(q, w1)?;
                let z = tape.add(z, b1)?;
                let h = tape.elu(z);
                let hw = tape.mul(h, w2)?;
                let out = tape.sum_rows(hw)?;
                let b2 = tape.reshape(b2, vec![n])?;
                Ok(tape.add(out, b2)?)
            }
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Vec<Var>> {
        self.nets.iter().map(|m| m.params.bind(tape)).collect()
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn mixing_dim(&self) -> usize {
        self.mixing_dim
    }
}

/// Team value of one agent-value vector in one global state.
pub fn mix(q: &[f64], state: &[f64], mixer: &Mixer) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = mixer.bind(&mut tape);
    let qv = tape.leaf(Tensor::new(vec![1, q.len()], q.to_vec())?);
    let sv = tape.leaf(Tensor::new(vec![1, state.len()], state.to_vec())?);
    let out = mixer.mix_on(&mut tape, &vars, qv, sv)?;
    Ok(tape.value(out).item())
}

/// Monotonic mixing with explicit weights: `elu(q W1 + b1) . w2 + b2`,
/// `W1` given row-major `[U, E]`.
pub fn monotonic_mix(q: &[f64], w1: &[f64], b1: &[f64], w2: &[f64], b2: f64) -> f64 {
    let e = b1.len();
    let mut out = b2;
    for k in 0..e {
        let z: f64 = b1[k] + q.iter().enumerate().map(|(u, &qu)| qu * w1[u * e + k].abs()).sum::<f64>();
        let h = if z > 0.0 { z } else { z.exp_m1() };
        out += h * w2[k].abs();
    }
    out
}

struct Learner {
    agent: Mlp,
    mixer: Mixer,
}

impl Learner {
    fn params(&self) -> Vec<&ParamSet> {
        std::iter::once(&self.agent.params).chain(self.mixer.nets.iter().map(|m| &m.params)).collect()
    }

    fn checksum(&self) -> u64 {
        self.params().iter().fold(0u64, |h, p| h.rotate_left(7) ^ p.checksum())
    }
}

/// Off-policy trainer state: online and target networks, replay and schedule.
pub struct OffPolicyTrainer {
    env: Environment,
    cfg: MixerConfig,
    seeds: SeedTree,
    budget: usize,
    online: Learner,
    target: Learner,
    opts: Vec<Adam>,
    replay: ReplayBuffer,
    steps: usize,
    episodes: usize,
    updates: usize,
    td_losses: Vec<f64>,
    behaviour_entropy: Vec<f64>,
    rng: Rng,
}

impl OffPolicyTrainer {
    /// `budget` is the number of environment steps to train for.
    pub fn new(scenario: ScenarioConfig, cfg: &MixerConfig, budget: usize) -> Result<Self> {
        cfg.validate()?;
        let env = Environment::new(scenario)?;
        let seeds = SeedTree::new(cfg.seed);
        let mut init = seeds.rng("init", &[]);
        let sizes = [&[env.obs_dim()][..], &cfg.hidden, &[NUM_ACTIONS][..]].concat();
        let agent = Mlp::new(&sizes, 2f64.sqrt(), 1.0, &mut init)?;
        let mixer = Mixer::new(cfg.mode, env.num_uavs(), env.global_state_dim(), cfg.mixing_dim, &mut init)?;
        let online = Learner { agent, mixer };
        let target = Learner { agent: online.agent.clone(), mixer: online.mixer.clone() };
        let opts = online.params().iter().map(|p| Adam::new(AdamConfig::with_lr(cfg.lr), p)).collect();
        Ok(Self {
            replay: ReplayBuffer::new(cfg.capacity),
            rng: seeds.rng("train", &[]),
            env,
            cfg: cfg.clone(),
            seeds,
            budget,
            online,
            target,
            opts,
            steps: 0,
            episodes: 0,
            updates: 0,
            td_losses: Vec::new(),
            behaviour_entropy: Vec::new(),
        })
    }

    pub fn agent(&self) -> &Mlp {
        &self.online.agent
    }

    pub fn mixer(&self) -> &Mixer {
        &self.online.mixer
    }

    pub fn env_steps(&self) -> usize {
        self.steps
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn target_checksum(&self) -> u64 {
        self.target.checksum()
    }

    pub fn finished(&self) -> bool {
        self.steps >= self.budget
    }

    fn act(&mut self, obs: &[Vec<f64>], eps: f64, rng: &mut Rng) -> Result<Vec<usize>> {
        let q = self.online.agent.forward_batch(&Tensor::from_rows(obs)?)?;
        let mut acts = Vec::with_capacity(obs.len());
        for r in 0..obs.len() {
            let g = greedy(q.row(r));
            let a = if rng.random::<f64>() < eps { rng.random_range(0..NUM_ACTIONS) } else { g };
            let mut p = vec![eps / NUM_ACTIONS as f64; NUM_ACTIONS];
            p[g] += 1.0 - eps;
            self.behaviour_entropy.push(entropy_of(&p));
            acts.push(a);
        }
        Ok(acts)
    }

    /// Plays one episode, learning along the way; `on_step` runs after every environment step.
    pub fn run_episode_with(&mut self, mut on_step: impl FnMut(&Self)) -> Result<EpisodeTrace> {
        let mut rng = self.seeds.rng("episode", &[self.episodes as u64]);
        let (mut state, mut obs) = self.env.reset();
        let mut trace = EpisodeTrace::start(&state);
        while !state.done {
            let eps = self.cfg.epsilon(self.steps, self.budget);
            let gs = self.env.global_state(&state, true);
            let acts = self.act(&obs, eps, &mut rng)?;
            let joint: Vec<Action> = acts.iter().map(|&a| Action::ALL[a]).collect();
            let step = self.env.step(&state, &joint, &mut rng)?;
            trace.push(&step);
            self.replay.push(Transition {
                state: gs,
                obs: obs.clone(),
                actions: acts,
                reward: step.reward * self.cfg.reward_scale,
                next_state: self.env.global_state(&step.next_state, true),
                next_obs: step.per_uav_obs.clone(),
                done: step.next_state.done,
            });
            self.steps += 1;
            if self.steps.is_multiple_of(self.cfg.train_every) && self.replay.len() >= self.cfg.batch {
                self.learn()?;
            }
            if self.steps.is_multiple_of(self.cfg.target_update_period) {
                self.target.agent = self.online.agent.clone();
                self.target.mixer = self.online.mixer.clone();
            }
            obs = step.per_uav_obs.clone();
            state = step.next_state;
            on_step(self);
        }
        self.episodes += 1;
        Ok(trace)
    }

    pub fn run_episode(&mut self) -> Result<EpisodeTrace> {
        self.run_episode_with(|_| {})
    }

    fn learn(&mut self) -> Result<()> {
        let idx = self.replay.sample(self.cfg.batch, &mut self.rng);
        let u = self.env.num_uavs();
        let n = idx.len();
        let rows = |f: &dyn Fn(&Transition) -> &Vec<Vec<f64>>| -> Result<Tensor> {
            let all: Vec<Vec<f64>> = idx.iter().flat_map(|&k| f(self.replay.get(k)).clone()).collect();
            Ok(Tensor::from_rows(&all)?)
        };
        let obs = rows(&|t| &t.obs)?;
        let next_obs = rows(&|t| &t.next_obs)?;
        let states = Tensor::from_rows(&idx.iter().map(|&k| self.replay.get(k).state.clone()).collect::<Vec<_>>())?;
        let next_states =
            Tensor::from_rows(&idx.iter().map(|&k| self.replay.get(k).next_state.clone()).collect::<Vec<_>>())?;
        let actions: Vec<usize> = idx.iter().flat_map(|&k| self.replay.get(k).actions.clone()).collect();

        // Targets from the frozen copies.
        let next_q = self.target.agent.forward_batch(&next_obs)?;
        let next_max: Vec<f64> = (0..n * u).map(|r| next_q.row(r)[greedy(next_q.row(r))]).collect();
        let mut ttape = Tape::new();
        let tvars = self.target.mixer.bind(&mut ttape);
        let tq = ttape.leaf(Tensor::new(vec![n, u], next_max)?);
        let ts = ttape.leaf(next_states);
        let tq_team = self.target.mixer.mix_on(&mut ttape, &tvars, tq, ts)?;
        let bootstrap = ttape.value(tq_team).data().to_vec();
        let targets: Vec<f64> = idx
            .iter()
            .zip(&bootstrap)
            .map(|(&k, &b)| {
                let t = self.replay.get(k);
                t.reward + if t.done { 0.0 } else { self.cfg.gamma * b }
            })
            .collect();

        let mut tape = Tape::new();
        let avars = self.online.agent.params.bind(&mut tape);
        let mvars = self.online.mixer.bind(&mut tape);
        let x = tape.leaf(obs);
        let q_all = self.online.agent.forward_on(&mut tape, &avars, x)?;
        let q_taken = tape.gather(q_all, actions)?;
        let q = tape.reshape(q_taken, vec![n, u])?;
        let s = tape.leaf(states);
        let q_team = self.online.mixer.mix_on(&mut tape, &mvars, q, s)?;
        let y = tape.leaf(Tensor::vector(targets));
        let err = tape.sub(q_team, y)?;
        let sq = tape.square(err);
        let loss = tape.mean(sq);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("TD loss after {} steps", self.steps)));
        }
        let grads = tape.backward(loss)?;

        let max_norm = self.cfg.max_grad_norm;
        let step_net = |net: &mut Mlp, vars: &[Var], opt: &mut Adam| -> Result<()> {
            net.params.zero_grad();
            net.params.accumulate(&grads, vars);
            if max_norm > 0.0 {
                net.params.clip_grad_norm(max_norm);
            }
            opt.step(&mut net.params)?;
            net.params.zero_grad();
            Ok(())
        };
        let (first, rest) = self.opts.split_first_mut().expect("agent optimizer");
        step_net(&mut self.online.agent, &avars, first)?;
        for ((net, vars), opt) in self.online.mixer.nets.iter_mut().zip(&mvars).zip(rest) {
            step_net(net, vars, opt)?;
        }
        self.updates += 1;
        self.td_losses.push(value);
        Ok(())
    }

    /// Plays `episodes_per_row` episodes and summarizes them as one metrics row.
    pub fn run_row(&mut self, row: usize) -> Result<MetricsRecord> {
        self.td_losses.clear();
        self.behaviour_entropy.clear();
        let mut stats = Vec::new();
        for _ in 0..self.cfg.episodes_per_row {
            stats.push(EpisodeStats::of(&self.run_episode()?));
        }
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let ep = EpisodeStats::mean(&stats);
        Ok(MetricsRecord {
            epoch: row,
            mean_reward: ep.reward,
            total_aou: ep.total_aou,
            data_collected_bits: ep.data_bits,
            devices_served: ep.devices_served,
            entropy: mean(&self.behaviour_entropy),
            clip_fraction: 0.0,
            actor_loss: 0.0,
            critic_loss: mean(&self.td_losses) / (self.cfg.reward_scale * self.cfg.reward_scale),
            terminal_distance: ep.terminal_distance,
        })
    }
}

pub struct OffPolicyOutcome {
    pub agent: Mlp,
    pub mixer: Mixer,
    pub metrics: Vec<MetricsRecord>,
}

/// Trains until `budget` environment steps have been taken, in whole metric rows.
pub fn train_offpolicy(scenario: ScenarioConfig, cfg: &MixerConfig, budget: usize) -> Result<OffPolicyOutcome> {
    let mut t = OffPolicyTrainer::new(scenario, cfg, budget)?;
    let mut metrics = Vec::new();
    while !t.finished() {
        metrics.push(t.run_row(metrics.len() + 1)?);
    }
    Ok(OffPolicyOutcome { agent: t.online.agent, mixer: t.online.mixer, metrics })
}
