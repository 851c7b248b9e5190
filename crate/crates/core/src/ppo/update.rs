use rand::seq::SliceRandom;
use rand::Rng;

use super::buffer::RolloutBuffer;
use super::loss::{actor_terms, critic_term, ActorBatch, CriticBatch};
use super::PpoHyper;
use crate::nn::{Adam, AdamConfig, Mlp, Tape, Tensor};
use crate::{Error, Result};

/// Shared decentralized actor and centralized critic.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl ActorCritic {
    /// Orthogonal init: hidden gain sqrt 2, actor head 0.01, critic head 1.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        state_dim: usize,
        hidden: &[usize],
        actions: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes = |i: usize, o: usize| [&[i][..], hidden, &[o][..]].concat();
        let actor = Mlp::new(&sizes(obs_dim, actions), 2f64.sqrt(), 0.01, rng)?;
        let critic = Mlp::new(&sizes(state_dim, 1), 2f64.sqrt(), 1.0, rng)?;
        Ok(Self { actor, critic })
    }

    /// Critic output in reward units.
    pub fn value(&self, state: &[f64], value_scale: f64) -> Result<f64> {
        Ok(self.critic.forward(state)?[0] * value_scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoOptim {
    pub actor: Adam,
    pub critic: Adam,
}

impl PpoOptim {
    pub fn new(ac: &ActorCritic, actor_lr: f64, critic_lr: f64) -> Self {
        Self {
            actor: Adam::new(AdamConfig::with_lr(actor_lr), &ac.actor.params),
            critic: Adam::new(AdamConfig::with_lr(critic_lr), &ac.critic.params),
        }
    }
}

/// One task's data for a (possibly multi-task) update.
///
/// With shifts set, losses are evaluated at `params + shift` and the resulting
/// gradients are applied to the unshifted parameters.
#[derive(Debug, Clone, Copy)]
pub struct TaskBatch<'a> {
    pub buffer: &'a RolloutBuffer,
    pub actor_shift: Option<&'a [f64]>,
    pub critic_shift: Option<&'a [f64]>,
}

impl<'a> TaskBatch<'a> {
    pub fn plain(buffer: &'a RolloutBuffer) -> Self {
        Self { buffer, actor_shift: None, critic_shift: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Full-batch losses: `actor` is the negated objective, `critic` the clipped value loss.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValue {
    pub actor: f64,
    pub critic: f64,
}

impl LossValue {
    pub fn total(&self) -> f64 {
        self.actor + self.critic
    }
}

fn normalized_advantages(buffer: &RolloutBuffer) -> Vec<f64> {
    let adv = buffer.advantages();
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std < 1e-8 { 1.0 } else { std };
    adv.iter().map(|a| (a - mean) / scale).collect()
}

fn batches(buffer: &RolloutBuffer, steps: &[usize], adv: &[f64], value_scale: f64) -> Result<(ActorBatch, CriticBatch)> {
    let u = buffer.agents();
    let mut obs = Vec::with_capacity(steps.len() * u * buffer.obs_dim());
    let mut actions = Vec::with_capacity(steps.len() * u);
    let mut old = Vec::with_capacity(steps.len() * u);
    let mut advantages = Vec::with_capacity(steps.len() * u);
    let mut states = Vec::with_capacity(steps.len() * buffer.state_dim());
    for &s in steps {
        for k in 0..u {
            let row = s * u + k;
            obs.extend_from_slice(buffer.obs_row(row));
            actions.push(buffer.actions()[row]);
            old.push(buffer.log_probs()[row]);
            advantages.push(adv[s]);
        }
        states.extend_from_slice(buffer.state(s));
    }
    let actor = ActorBatch {
        obs: Tensor::new(vec![steps.len() * u, buffer.obs_dim()], obs)?,
        actions,
        old_log_probs: old,
        advantages,
    };
    let critic = CriticBatch {
        states: Tensor::new(vec![steps.len(), buffer.state_dim()], states)?,
        old_values: steps.iter().map(|&s| buffer.values()[s] / value_scale).collect(),
        returns: steps.iter().map(|&s| buffer.returns()[s] / value_scale).collect(),
    };
    Ok((actor, critic))
}

fn shifted(net: &Mlp, shift: Option<&[f64]>) -> Result<Mlp> {
    let mut out = net.clone();
    if let Some(d) = shift {
        let v: Vec<f64> = net.params.flat_values().iter().zip(d).map(|(a, b)| a + b).collect();
        if v.len() != net.params.num_scalars() || d.len() != v.len() {
            return Err(Error::invalid("parameter shift", "length does not match the network"));
        }
        out.params.set_flat_values(&v)?;
    }
    Ok(out)
}

struct Grads {
    actor: Vec<f64>,
    critic: Vec<f64>,
    stats: UpdateStats,
}

fn minibatch_grads(
    actor: &Mlp,
    critic: &Mlp,
    buffer: &RolloutBuffer,
    steps: &[usize],
    adv: &[f64],
    hyper: &PpoHyper,
) -> Result<Grads> {
    let (ab, cb) = batches(buffer, steps, adv, hyper.value_scale)?;

    let mut tape = Tape::new();
    let vars = actor.params.bind(&mut tape);
    let terms = actor_terms(&mut tape, actor, &vars, &ab, hyper.clip, hyper.entropy_coef)?;
    let loss = tape.scale(terms.objective, -1.0);
    let g = tape.backward(loss)?;
    let mut a = actor.params.clone();
    a.zero_grad();
    a.accumulate(&g, &vars);

    let mut ctape = Tape::new();
    let cvars = critic.params.bind(&mut ctape);
    let closs = critic_term(&mut ctape, critic, &cvars, &cb, hyper.value_clip)?;
    let cg = ctape.backward(closs)?;
    let mut c = critic.params.clone();
    c.zero_grad();
    c.accumulate(&cg, &cvars);

    let actor_loss = tape.value(loss).item();
    let critic_loss = ctape.value(closs).item();
    if !actor_loss.is_finite() || !critic_loss.is_finite() {
        return Err(Error::NonFinite(format!("loss (actor {actor_loss}, critic {critic_loss})")));
    }
    Ok(Grads {
        actor: a.flat_grad(),
        critic: c.flat_grad(),
        stats: UpdateStats {
            actor_loss,
            critic_loss,
            entropy: tape.value(terms.entropy).item(),
            clip_fraction: terms.clip_fraction,
            minibatches: 1,
        },
    })
}

fn apply(net: &mut Mlp, opt: &mut Adam, grad: &[f64], max_norm: f64) -> Result<()> {
    net.params.set_flat_grad(grad)?;
    if max_norm > 0.0 {
        net.params.clip_grad_norm(max_norm);
    }
    opt.step(&mut net.params)?;
    net.params.zero_grad();
    Ok(())
}

/// Shuffled minibatch PPO over one or more task buffers.
///
/// Minibatch `k` of every task contributes to the same optimizer step; the
/// per-task gradients are summed in task order.
pub fn update_multi<R: Rng + ?Sized>(
    ac: &mut ActorCritic,
    opt: &mut PpoOptim,
    tasks: &[TaskBatch<'_>],
    hyper: &PpoHyper,
    rng: &mut R,
) -> Result<UpdateStats> {
    if tasks.is_empty() {
        return Err(Error::Empty("task batch"));
    }
    for t in tasks {
        if t.buffer.is_empty() {
            return Err(Error::Empty("rollout buffer"));
        }
        if !t.buffer.is_complete() {
            return Err(Error::invalid("rollout buffer", "trajectory not finished"));
        }
    }
    let advs: Vec<Vec<f64>> = tasks.iter().map(|t| normalized_advantages(t.buffer)).collect();
    let mut total = UpdateStats::default();
    for _ in 0..hyper.epochs {
        let orders: Vec<Vec<usize>> = tasks
            .iter()
            .map(|t| {
                let mut idx: Vec<usize> = (0..t.buffer.steps()).collect();
                idx.shuffle(rng);
                idx
            })
            .collect();
        let chunks = orders.iter().map(|o| o.len().div_ceil(hyper.minibatch)).max().unwrap_or(0);
        for k in 0..chunks {
            let mut ga = vec![0.0; ac.actor.params.num_scalars()];
            let mut gc = vec![0.0; ac.critic.params.num_scalars()];
            for (m, task) in tasks.iter().enumerate() {
                let lo = k * hyper.minibatch;
                if lo >= orders[m].len() {
                    continue;
                }
                let hi = (lo + hyper.minibatch).min(orders[m].len());
                let actor = shifted(&ac.actor, task.actor_shift)?;
                let critic = shifted(&ac.critic, task.critic_shift)?;
                let g = minibatch_grads(&actor, &critic, task.buffer, &orders[m][lo..hi], &advs[m], hyper)?;
                ga.iter_mut().zip(&g.actor).for_each(|(a, b)| *a += b);
                gc.iter_mut().zip(&g.critic).for_each(|(a, b)| *a += b);
                total.actor_loss += g.stats.actor_loss;
                total.critic_loss += g.stats.critic_loss;
                total.entropy += g.stats.entropy;
                total.clip_fraction += g.stats.clip_fraction;
                total.minibatches += 1;
            }
            apply(&mut ac.actor, &mut opt.actor, &ga, hyper.max_grad_norm)?;
            apply(&mut ac.critic, &mut opt.critic, &gc, hyper.max_grad_norm)?;
        }
    }
    let n = total.minibatches.max(1) as f64;
    total.actor_loss /= n;
    total.critic_loss /= n;
    total.entropy /= n;
    total.clip_fraction /= n;
    Ok(total)
}

/// A single-buffer PPO update.
pub fn update<R: Rng + ?Sized>(
    ac: &mut ActorCritic,
    opt: &mut PpoOptim,
    buffer: &RolloutBuffer,
    hyper: &PpoHyper,
    rng: &mut R,
) -> Result<UpdateStats> {
    update_multi(ac, opt, &[TaskBatch::plain(buffer)], hyper, rng)
}

/// Full-batch losses of `ac` on `buffer`, without updating anything.
pub fn evaluate_losses(ac: &ActorCritic, buffer: &RolloutBuffer, hyper: &PpoHyper) -> Result<LossValue> {
    if buffer.is_empty() {
        return Err(Error::Empty("rollout buffer"));
    }
    let adv = normalized_advantages(buffer);
    let steps: Vec<usize> = (0..buffer.steps()).collect();
    let g = minibatch_grads(&ac.actor, &ac.critic, buffer, &steps, &adv, hyper)?;
    Ok(LossValue { actor: g.stats.actor_loss, critic: g.stats.critic_loss })
}
