//! Meta-training of the actor-critic initialization across missions that
//! differ in horizon and rate threshold, and the fast-adaptation protocol.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{EpisodeTrace, Environment, ScenarioConfig};
use crate::mappo::{collect_batch, init_actor_critic, mean_stats, TrainConfig, Trainer};
use crate::ppo::{evaluate_losses, update, update_multi, ActorCritic, PpoHyper, PpoOptim, RolloutBuffer, TaskBatch};
use crate::seed::{Rng, SeedTree};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaMode {
    /// First-order MAML: post-adaptation gradients applied to the meta-parameters.
    Fomaml,
    /// Move the meta-parameters towards the adapted ones.
    Reptile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub horizon_range: [usize; 2],
    pub rate_min_range: [f64; 2],
    /// Task pool size M.
    pub tasks: usize,
    /// Tasks per meta-step.
    pub tasks_per_step: usize,
    pub meta_epochs: usize,
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub meta_lr: f64,
    pub outer_epochs: usize,
    /// Outer minibatch in timesteps; 0 means the whole post-adaptation batch.
    pub outer_minibatch: usize,
    pub mode: MetaMode,
    /// Interpolation factor of the Reptile update.
    pub reptile_rate: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            horizon_range: [100, 200],
            rate_min_range: [1e5, 1.2e5],
            tasks: 100,
            tasks_per_step: 5,
            meta_epochs: 100,
            inner_lr: 3e-4,
            inner_steps: 1,
            meta_lr: 3e-4,
            outer_epochs: 4,
            outer_minibatch: 64,
            mode: MetaMode::Fomaml,
            reptile_rate: 0.5,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let [tlo, thi] = self.horizon_range;
        if tlo < 1 || tlo > thi {
            return Err(Error::invalid("meta.horizon_range", format!("expected 1 <= lo <= hi, got [{tlo}, {thi}]")));
        }
        let [rlo, rhi] = self.rate_min_range;
        if !(rlo.is_finite() && rhi.is_finite()) || rlo < 0.0 || rlo > rhi {
            return Err(Error::invalid("meta.rate_min_range", format!("expected 0 <= lo <= hi, got [{rlo}, {rhi}]")));
        }
        let check = |ok: bool, f: &str, r: &str| if ok { Ok(()) } else { Err(Error::invalid(f, r)) };
        check(self.tasks >= 1, "meta.tasks", "must be at least 1")?;
        check(self.tasks_per_step >= 1, "meta.tasks_per_step", "must be at least 1")?;
        check(self.meta_epochs >= 1, "meta.meta_epochs", "must be at least 1")?;
        check(self.inner_lr >= 0.0 && self.inner_lr.is_finite(), "meta.inner_lr", "must be finite and nonnegative")?;
        check(self.inner_steps >= 1, "meta.inner_steps", "must be at least 1")?;
        check(self.meta_lr >= 0.0 && self.meta_lr.is_finite(), "meta.meta_lr", "must be finite and nonnegative")?;
        check(self.outer_epochs >= 1, "meta.outer_epochs", "must be at least 1")?;
        check((0.0..=1.0).contains(&self.reptile_rate), "meta.reptile_rate", "must lie in [0, 1]")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: usize,
    pub horizon: usize,
    pub rate_min: f64,
}

/// Uniform ranges over `(T, R_min)` on top of a fixed scenario template.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDistribution {
    pub horizon_range: [usize; 2],
    pub rate_min_range: [f64; 2],
    pub template: ScenarioConfig,
    pub pool: Vec<Task>,
}

/// Scenario with `T` and `R_min` drawn uniformly; everything else from the template.
pub fn sample_task(dist: &TaskDistribution, rng: &mut Rng) -> ScenarioConfig {
    let t = draw(dist, rng);
    dist.scenario(&t)
}

fn draw(dist: &TaskDistribution, rng: &mut Rng) -> Task {
    let [tlo, thi] = dist.horizon_range;
    let [rlo, rhi] = dist.rate_min_range;
    let horizon = rng.random_range(tlo..=thi);
    let rate_min = if rhi > rlo { rng.random_range(rlo..=rhi) } else { rlo };
    Task { id: 0, horizon, rate_min }
}

impl TaskDistribution {
    /// Draws a pool of `cfg.tasks` tasks from the `task_pool` stream.
    pub fn new(template: ScenarioConfig, cfg: &MetaConfig, seeds: &SeedTree) -> Result<Self> {
        cfg.validate()?;
        let mut dist = Self {
            horizon_range: cfg.horizon_range,
            rate_min_range: cfg.rate_min_range,
            template,
            pool: Vec::new(),
        };
        let mut rng = seeds.rng("task_pool", &[]);
        dist.pool = (0..cfg.tasks).map(|id| Task { id, ..draw(&dist, &mut rng) }).collect();
        Ok(dist)
    }

    pub fn scenario(&self, t: &Task) -> ScenarioConfig {
        let mut s = self.template.clone();
        s.horizon = t.horizon;
        s.rate_min = t.rate_min;
        s
    }

    /// A task whose `(T, R_min)` pair is not in the pool.
    pub fn held_out(&self, rng: &mut Rng) -> Task {
        loop {
            let t = draw(self, rng);
            if !self.pool.iter().any(|p| p.horizon == t.horizon && p.rate_min == t.rate_min) {
                return Task { id: usize::MAX, ..t };
            }
        }
    }
}

/// Adapted parameters plus the rollouts they were fitted on.
#[derive(Debug, Clone)]
pub struct Adapted {
    pub ac: ActorCritic,
    pub pre_reward: f64,
}

/// `cfg.inner_steps` PPO updates from `meta`, each on fresh rollouts; `meta` is not touched.
pub fn inner_adapt(
    meta: &ActorCritic,
    env: &Environment,
    train: &TrainConfig,
    cfg: &MetaConfig,
    seeds: &SeedTree,
    path: &[u64],
) -> Result<Adapted> {
    let mut ac = meta.clone();
    let mut opt = PpoOptim::new(&ac, cfg.inner_lr, cfg.inner_lr);
    let mut pre_reward = 0.0;
    for k in 0..cfg.inner_steps {
        let p = [path, &[k as u64][..]].concat();
        let (buffer, traces) = collect_batch(env, &ac, train, seeds, "adapt_rollout", &p)?;
        if k == 0 {
            pre_reward = mean_stats(&traces).reward;
        }
        let mut rng = seeds.rng("adapt_update", &p);
        update(&mut ac, &mut opt, &buffer, &train.ppo, &mut rng)?;
    }
    Ok(Adapted { ac, pre_reward })
}

/// Per-task outcome of one meta-step.
#[derive(Debug, Clone)]
pub struct TaskStep {
    pub task: Task,
    pub adapted: ActorCritic,
    pub pre_reward: f64,
    pub post_reward: f64,
    pub post_buffer: RolloutBuffer,
    pub post_traces: Vec<EpisodeTrace>,
    /// Post-adaptation loss at the adapted parameters.
    pub loss: f64,
}

/// One meta-CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub meta_epoch: usize,
    pub task_id: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "R_min")]
    pub rate_min: f64,
    pub pre_adapt_reward: f64,
    pub post_adapt_reward: f64,
    /// This task's term of the outer loss.
    pub outer_loss: f64,
}

pub fn write_meta_csv<W: Write>(records: &[MetaRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Meta-parameters, their optimizer and the task pool.
pub struct MetaTrainer {
    pub dist: TaskDistribution,
    pub train: TrainConfig,
    pub cfg: MetaConfig,
    seeds: SeedTree,
    pub meta: ActorCritic,
    opt: PpoOptim,
    epoch: usize,
}

impl MetaTrainer {
    pub fn new(template: ScenarioConfig, train: &TrainConfig, cfg: &MetaConfig) -> Result<Self> {
        train.validate()?;
        let seeds = SeedTree::new(train.seed);
        let dist = TaskDistribution::new(template, cfg, &seeds)?;
        let env = Environment::new(dist.scenario(&dist.pool[0]))?;
        let meta = init_actor_critic(&env, train, &seeds)?;
        let opt = PpoOptim::new(&meta, cfg.meta_lr, cfg.meta_lr);
        Ok(Self { dist, train: train.clone(), cfg: cfg.clone(), seeds, meta, opt, epoch: 0 })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn seeds(&self) -> &SeedTree {
        &self.seeds
    }

    fn outer_hyper(&self) -> PpoHyper {
        PpoHyper {
            epochs: self.cfg.outer_epochs,
            minibatch: if self.cfg.outer_minibatch == 0 { usize::MAX } else { self.cfg.outer_minibatch },
            ..self.train.ppo.clone()
        }
    }

    /// Inner adaptation and post-adaptation rollouts for the next meta-step's tasks.
    pub fn adapt_batch(&self) -> Result<Vec<TaskStep>> {
        let e = self.epoch as u64 + 1;
        let mut pick = self.seeds.rng("task_batch", &[e]);
        let mut out = Vec::with_capacity(self.cfg.tasks_per_step);
        for m in 0..self.cfg.tasks_per_step {
            let task = self.dist.pool[pick.random_range(0..self.dist.pool.len())];
            let env = Environment::new(self.dist.scenario(&task))?;
            let adapted = inner_adapt(&self.meta, &env, &self.train, &self.cfg, &self.seeds, &[e, m as u64])?;
            let (post_buffer, post_traces) =
                collect_batch(&env, &adapted.ac, &self.train, &self.seeds, "rollout", &[e, m as u64])?;
            let loss = evaluate_losses(&adapted.ac, &post_buffer, &self.train.ppo)?.total();
            out.push(TaskStep {
                task,
                post_reward: mean_stats(&post_traces).reward,
                pre_reward: adapted.pre_reward,
                adapted: adapted.ac,
                post_buffer,
                post_traces,
                loss,
            });
        }
        Ok(out)
    }

    /// Applies the outer update for an adapted task batch.
    pub fn outer_step(&mut self, steps: &[TaskStep]) -> Result<()> {
        if steps.is_empty() {
            return Err(Error::Empty("task batch"));
        }
        let e = self.epoch as u64 + 1;
        match self.cfg.mode {
            MetaMode::Fomaml => {
                let base_a = self.meta.actor.params.flat_values();
                let base_c = self.meta.critic.params.flat_values();
                let shifts: Vec<(Vec<f64>, Vec<f64>)> = steps
                    .iter()
                    .map(|s| {
                        (
                            diff(&s.adapted.actor.params.flat_values(), &base_a),
                            diff(&s.adapted.critic.params.flat_values(), &base_c),
                        )
                    })
                    .collect();
                let batches: Vec<TaskBatch<'_>> = steps
                    .iter()
                    .zip(&shifts)
                    .map(|(s, (da, dc))| TaskBatch {
                        buffer: &s.post_buffer,
                        actor_shift: Some(da),
                        critic_shift: Some(dc),
                    })
                    .collect();
                let hyper = self.outer_hyper();
                let mut rng = self.seeds.rng("update", &[e]);
                update_multi(&mut self.meta, &mut self.opt, &batches, &hyper, &mut rng)?;
            }
            MetaMode::Reptile => {
                let n = steps.len() as f64;
                for (net, pick) in [
                    (&mut self.meta.actor, (|a: &ActorCritic| &a.actor) as fn(&ActorCritic) -> &crate::nn::Mlp),
                    (&mut self.meta.critic, |a: &ActorCritic| &a.critic),
                ] {
                    let mut v = net.params.flat_values();
                    let mut mean_delta = vec![0.0; v.len()];
                    for s in steps {
                        let d = diff(&pick(&s.adapted).params.flat_values(), &v);
                        mean_delta.iter_mut().zip(&d).for_each(|(m, x)| *m += x / n);
                    }
                    v.iter_mut().zip(&mean_delta).for_each(|(x, d)| *x += self.cfg.reptile_rate * d);
                    net.params.set_flat_values(&v)?;
                }
            }
        }
        Ok(())
    }

    /// One full meta-step; returns one record per task.
    pub fn step(&mut self) -> Result<Vec<MetaRecord>> {
        let steps = self.adapt_batch()?;
        self.outer_step(&steps)?;
        self.epoch += 1;
        Ok(steps
            .iter()
            .map(|s| MetaRecord {
                meta_epoch: self.epoch,
                task_id: s.task.id,
                horizon: s.task.horizon,
                rate_min: s.task.rate_min,
                pre_adapt_reward: s.pre_reward,
                post_adapt_reward: s.post_reward,
                outer_loss: s.loss,
            })
            .collect())
    }
}

pub struct MetaOutcome {
    pub meta: ActorCritic,
    pub records: Vec<MetaRecord>,
}

pub fn meta_train(
    template: ScenarioConfig,
    train: &TrainConfig,
    cfg: &MetaConfig,
    mut observer: impl FnMut(&MetaTrainer, &[MetaRecord]) -> Result<()>,
) -> Result<MetaOutcome> {
    let mut t = MetaTrainer::new(template, train, cfg)?;
    let mut records = Vec::new();
    for _ in 0..cfg.meta_epochs {
        let rows = t.step()?;
        observer(&t, &rows)?;
        records.extend(rows);
    }
    Ok(MetaOutcome { meta: t.meta, records })
}

/// Mean rollout reward after `k` updates, for `k = 0..=budget`.
pub fn adapt_and_eval(init: &ActorCritic, task: ScenarioConfig, train: &TrainConfig, budget: usize) -> Result<Vec<f64>> {
    let mut t = Trainer::with_init(task, train, init.clone())?;
    let mut curve = Vec::with_capacity(budget + 1);
    for _ in 0..budget {
        curve.push(t.run_epoch()?.mean_reward);
    }
    let (_, traces) = t.collect()?;
    curve.push(mean_stats(&traces).reward);
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub update: usize,
    pub meta_reward: f64,
    pub scratch_reward: f64,
}

pub fn write_curve_csv<W: Write>(meta: &[f64], scratch: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (k, (m, s)) in meta.iter().zip(scratch).enumerate() {
        w.serialize(CurveRow { update: k, meta_reward: *m, scratch_reward: *s })?;
    }
    w.flush()?;
    Ok(())
}

/// Trailing moving average over `window` points.
pub fn smooth(curve: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..curve.len())
        .map(|k| {
            let lo = (k + 1).saturating_sub(w);
            curve[lo..=k].iter().sum::<f64>() / (k + 1 - lo) as f64
        })
        .collect()
}
