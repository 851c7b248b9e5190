//! Centralized-critic multi-agent PPO: rollout collection, the epoch loop and
//! frozen-policy evaluation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::{check_constraints, Action, ConstraintReport, EpisodeTrace, Environment, ScenarioConfig, NUM_ACTIONS};
use crate::nn::{Mlp, Tensor};
use crate::ppo::{argmax, sample_action, softmax, update, ActorCritic, PpoHyper, PpoOptim, RolloutBuffer, UpdateStats};
use crate::seed::{Rng, SeedTree};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Sample,
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Epochs E.
    pub epochs: usize,
    /// Rollouts B per epoch.
    pub rollouts: usize,
    pub hidden: Vec<usize>,
    /// Whether the critic's global state carries device ages.
    pub critic_sees_aou: bool,
    /// Checkpoint cadence in epochs; 0 keeps only the final parameters.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub ppo: PpoHyper,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            rollouts: 8,
            hidden: vec![64, 64],
            critic_sees_aou: true,
            checkpoint_every: 0,
            seed: 0,
            ppo: PpoHyper::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("training.epochs", "must be at least 1"));
        }
        if self.rollouts == 0 {
            return Err(Error::invalid("training.rollouts", "must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("training.hidden", "layer widths must be positive"));
        }
        self.ppo.validate()
    }
}

/// Per-episode aggregates, or their mean over several episodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub reward: f64,
    /// Sum over slots of the summed device ages.
    pub total_aou: f64,
    pub data_bits: f64,
    /// Distinct devices served at least once.
    pub devices_served: f64,
    /// Summed UAV distance to the final position over the grid diagonal.
    pub terminal_distance: f64,
}

impl EpisodeStats {
    pub fn of(trace: &EpisodeTrace) -> Self {
        Self {
            reward: trace.total_reward(),
            total_aou: trace.total_aou() as f64,
            data_bits: trace.data_bits(),
            devices_served: trace.devices_served() as f64,
            terminal_distance: trace.terminal_term(),
        }
    }

    pub fn mean(items: &[EpisodeStats]) -> Self {
        let n = items.len().max(1) as f64;
        let mut m = Self::default();
        for s in items {
            m.reward += s.reward;
            m.total_aou += s.total_aou;
            m.data_bits += s.data_bits;
            m.devices_served += s.devices_served;
            m.terminal_distance += s.terminal_distance;
        }
        m.reward /= n;
        m.total_aou /= n;
        m.data_bits /= n;
        m.devices_served /= n;
        m.terminal_distance /= n;
        m
    }
}

/// One metrics CSV row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub mean_reward: f64,
    pub total_aou: f64,
    pub data_collected_bits: f64,
    pub devices_served: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub terminal_distance: f64,
}

impl MetricsRecord {
    pub fn new(epoch: usize, ep: &EpisodeStats, st: &UpdateStats) -> Self {
        Self {
            epoch,
            mean_reward: ep.reward,
            total_aou: ep.total_aou,
            data_collected_bits: ep.data_bits,
            devices_served: ep.devices_served,
            entropy: st.entropy,
            clip_fraction: st.clip_fraction,
            actor_loss: st.actor_loss,
            critic_loss: st.critic_loss,
            terminal_distance: ep.terminal_distance,
        }
    }

    /// Team reward rebuilt from the logged data, age and terminal series.
    pub fn recombined_reward(&self, env: &Environment) -> f64 {
        let w = &env.scenario().weights;
        let data = self.data_collected_bits / (env.slot_duration() * env.rate_norm());
        let age = self.total_aou / env.aou_norm();
        w.data * data - w.aou * age - w.terminal * self.terminal_distance
    }
}

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Picks every agent's action from its own local observation only.
pub fn select_actions(actor: &Mlp, obs: &[Vec<f64>], mode: EvalMode, rng: &mut Rng) -> Result<(Vec<usize>, Vec<f64>)> {
    let x = Tensor::from_rows(obs)?;
    let logits = actor.forward_batch(&x)?;
    let mut actions = Vec::with_capacity(obs.len());
    let mut log_probs = Vec::with_capacity(obs.len());
    for r in 0..obs.len() {
        let p = softmax(logits.row(r));
        let a = match mode {
            EvalMode::Sample => sample_action(&p, rng),
            EvalMode::Argmax => argmax(&p),
        };
        actions.push(a);
        log_probs.push(p[a].ln());
    }
    Ok((actions, log_probs))
}

fn to_actions(idx: &[usize]) -> Vec<Action> {
    idx.iter().map(|&a| Action::from_index(a).expect("policy head has five outputs")).collect()
}

/// One episode from reset; appends it to `buffer` and closes the trajectory.
pub fn collect_rollout(
    env: &Environment,
    ac: &ActorCritic,
    cfg: &TrainConfig,
    mode: EvalMode,
    buffer: &mut RolloutBuffer,
    rng: &mut Rng,
) -> Result<EpisodeTrace> {
    let (mut state, mut obs) = env.reset();
    let mut trace = EpisodeTrace::start(&state);
    while !state.done {
        let gs = env.global_state(&state, cfg.critic_sees_aou);
        let value = ac.value(&gs, cfg.ppo.value_scale)?;
        let (acts, lps) = select_actions(&ac.actor, &obs, mode, rng)?;
        let step = env.step(&state, &to_actions(&acts), rng)?;
        buffer.push_step(&obs, &acts, &lps, &gs, step.reward, value)?;
        trace.push(&step);
        obs = step.per_uav_obs.clone();
        state = step.next_state;
    }
    buffer.finish_trajectory(0.0, cfg.ppo.gamma, cfg.ppo.gae_lambda)?;
    Ok(trace)
}

/// `cfg.rollouts` sampled episodes; episode `b` uses stream `label` at `prefix ++ [b]`.
pub fn collect_batch(
    env: &Environment,
    ac: &ActorCritic,
    cfg: &TrainConfig,
    seeds: &SeedTree,
    label: &str,
    prefix: &[u64],
) -> Result<(RolloutBuffer, Vec<EpisodeTrace>)> {
    let mut buffer = RolloutBuffer::new(env.num_uavs(), env.obs_dim(), env.global_state_dim());
    let mut traces = Vec::with_capacity(cfg.rollouts);
    for b in 0..cfg.rollouts {
        let path = [prefix, &[b as u64][..]].concat();
        let mut rng = seeds.rng(label, &path);
        traces.push(collect_rollout(env, ac, cfg, EvalMode::Sample, &mut buffer, &mut rng)?);
    }
    Ok((buffer, traces))
}

pub fn mean_stats(traces: &[EpisodeTrace]) -> EpisodeStats {
    EpisodeStats::mean(&traces.iter().map(EpisodeStats::of).collect::<Vec<_>>())
}

/// Fresh actor-critic for `env`, drawn from the `init` stream.
pub fn init_actor_critic(env: &Environment, cfg: &TrainConfig, seeds: &SeedTree) -> Result<ActorCritic> {
    let mut rng = seeds.rng("init", &[]);
    ActorCritic::new(env.obs_dim(), env.global_state_dim(), &cfg.hidden, NUM_ACTIONS, &mut rng)
}

/// The epoch loop: B rollouts into a fresh buffer, then one PPO update.
#[derive(Debug, Clone)]
pub struct Trainer {
    env: Environment,
    cfg: TrainConfig,
    seeds: SeedTree,
    pub ac: ActorCritic,
    opt: PpoOptim,
    epoch: usize,
}

impl Trainer {
    pub fn new(scenario: ScenarioConfig, cfg: &TrainConfig) -> Result<Self> {
        let env = Environment::new(scenario)?;
        cfg.validate()?;
        let seeds = SeedTree::new(cfg.seed);
        let ac = init_actor_critic(&env, cfg, &seeds)?;
        Self::assemble(env, cfg, ac)
    }

    /// Starts from given parameters instead of a fresh draw.
    pub fn with_init(scenario: ScenarioConfig, cfg: &TrainConfig, ac: ActorCritic) -> Result<Self> {
        let env = Environment::new(scenario)?;
        cfg.validate()?;
        if ac.actor.input_dim() != env.obs_dim() || ac.critic.input_dim() != env.global_state_dim() {
            return Err(Error::invalid("init", "network dimensions do not match the scenario"));
        }
        Self::assemble(env, cfg, ac)
    }

    fn assemble(env: Environment, cfg: &TrainConfig, ac: ActorCritic) -> Result<Self> {
        let opt = PpoOptim::new(&ac, cfg.ppo.actor_lr, cfg.ppo.critic_lr);
        Ok(Self { env, cfg: cfg.clone(), seeds: SeedTree::new(cfg.seed), ac, opt, epoch: 0 })
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Rollouts of the next epoch under the current policy, without updating.
    pub fn collect(&self) -> Result<(RolloutBuffer, Vec<EpisodeTrace>)> {
        let e = self.epoch as u64 + 1;
        collect_batch(&self.env, &self.ac, &self.cfg, &self.seeds, "rollout", &[e, 0])
    }

    pub fn run_epoch(&mut self) -> Result<MetricsRecord> {
        let e = self.epoch + 1;
        let (buffer, traces) = self.collect()?;
        let mut rng = self.seeds.rng("update", &[e as u64]);
        let stats = update(&mut self.ac, &mut self.opt, &buffer, &self.cfg.ppo, &mut rng).map_err(|err| match err {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {e}")),
            other => other,
        })?;
        self.epoch = e;
        Ok(MetricsRecord::new(e, &mean_stats(&traces), &stats))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub ac: ActorCritic,
    pub metrics: Vec<MetricsRecord>,
}

/// Runs all epochs; `observer` sees the trainer after every epoch.
pub fn train(
    scenario: ScenarioConfig,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&Trainer, &MetricsRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(scenario, cfg)?;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let rec = trainer.run_epoch()?;
        observer(&trainer, &rec)?;
        metrics.push(rec);
    }
    Ok(TrainOutcome { ac: trainer.ac, metrics })
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub mean: EpisodeStats,
    pub episodes: Vec<EpisodeStats>,
    pub traces: Vec<EpisodeTrace>,
    pub constraints: Vec<ConstraintReport>,
}

/// Frozen-policy episodes. Only the actor is consulted.
pub fn evaluate(actor: &Mlp, env: &Environment, episodes: usize, mode: EvalMode, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::invalid("episodes", "must be at least 1"));
    }
    if actor.input_dim() != env.obs_dim() || actor.output_dim() != NUM_ACTIONS {
        return Err(Error::invalid(
            "actor",
            format!(
                "network maps {} -> {} but the scenario needs {} -> {}",
                actor.input_dim(),
                actor.output_dim(),
                env.obs_dim(),
                NUM_ACTIONS
            ),
        ));
    }
    let seeds = SeedTree::new(seed);
    let mut traces = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let mut rng = seeds.rng("eval", &[k as u64]);
        let (mut state, mut obs) = env.reset();
        let mut trace = EpisodeTrace::start(&state);
        while !state.done {
            let (acts, _) = select_actions(actor, &obs, mode, &mut rng)?;
            let step = env.step(&state, &to_actions(&acts), &mut rng)?;
            trace.push(&step);
            obs = step.per_uav_obs.clone();
            state = step.next_state;
        }
        traces.push(trace);
    }
    let stats: Vec<EpisodeStats> = traces.iter().map(EpisodeStats::of).collect();
    let constraints = traces.iter().map(|t| check_constraints(t, env)).collect();
    Ok(EvalReport { mode, mean: EpisodeStats::mean(&stats), episodes: stats, traces, constraints })
}

/// Actor with a zero network: uniform over the five moves.
pub fn uniform_actor(env: &Environment) -> Mlp {
    Mlp::zeros(&[env.obs_dim(), NUM_ACTIONS]).expect("positive sizes")
}
