use rand::Rng;

use crate::nn::{Mlp, Tape, Tensor, Var};
use crate::{Error, Result};

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Action probabilities of the shared actor for one local observation.
pub fn policy_distribution(actor: &Mlp, obs: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&actor.forward(obs)?))
}

pub fn entropy_of(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// `min(r A, clip(r, 1-eps, 1+eps) A)` for one sample.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// `max((V - R)^2, (clip(V, V_old - eps, V_old + eps) - R)^2)` for one sample.
pub fn clipped_value_error(v: f64, v_old: f64, ret: f64, eps: f64) -> f64 {
    let c = v.clamp(v_old - eps, v_old + eps);
    (v - ret).powi(2).max((c - ret).powi(2))
}

/// Actor rows of one minibatch.
#[derive(Debug, Clone)]
pub struct ActorBatch {
    pub obs: Tensor,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Critic rows of one minibatch, in critic units.
#[derive(Debug, Clone)]
pub struct CriticBatch {
    pub states: Tensor,
    pub old_values: Vec<f64>,
    pub returns: Vec<f64>,
}

pub struct ActorTerms {
    /// Mean clipped surrogate.
    pub surrogate: Var,
    /// Mean policy entropy.
    pub entropy: Var,
    /// `surrogate + coef * entropy`, to be maximized.
    pub objective: Var,
    pub clip_fraction: f64,
}

/// Records the actor objective on `tape`; `vars` are the bound actor parameters.
pub fn actor_terms(
    tape: &mut Tape,
    actor: &Mlp,
    vars: &[Var],
    batch: &ActorBatch,
    clip: f64,
    entropy_coef: f64,
) -> Result<ActorTerms> {
    let n = batch.actions.len();
    if n == 0 {
        return Err(Error::Empty("actor batch"));
    }
    if batch.obs.rows() != n || batch.old_log_probs.len() != n || batch.advantages.len() != n {
        return Err(Error::invalid("actor batch", "row counts differ"));
    }
    let x = tape.leaf(batch.obs.clone());
    let logits = actor.forward_on(tape, vars, x)?;
    let logp_all = tape.log_softmax(logits)?;
    let logp = tape.gather(logp_all, batch.actions.clone())?;
    let old = tape.leaf(Tensor::vector(batch.old_log_probs.clone()));
    let diff = tape.sub(logp, old)?;
    let ratio = tape.exp(diff);
    let ratios = tape.value(ratio).data().to_vec();
    if ratios.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("probability ratio (stale buffer?)".into()));
    }
    let clip_fraction = ratios.iter().filter(|r| (**r - 1.0).abs() > clip).count() as f64 / n as f64;

    let adv = tape.leaf(Tensor::vector(batch.advantages.clone()));
    let plain = tape.mul(ratio, adv)?;
    let clipped_ratio = tape.clamp(ratio, vec![1.0 - clip; n], vec![1.0 + clip; n])?;
    let clipped = tape.mul(clipped_ratio, adv)?;
    let per_sample = tape.minimum(plain, clipped)?;
    let surrogate = tape.mean(per_sample);

    let probs = tape.exp(logp_all);
    let plogp = tape.mul(probs, logp_all)?;
    let row_sum = tape.sum_rows(plogp)?;
    let neg_mean = tape.mean(row_sum);
    let entropy = tape.scale(neg_mean, -1.0);

    let bonus = tape.scale(entropy, entropy_coef);
    let objective = tape.add(surrogate, bonus)?;
    Ok(ActorTerms { surrogate, entropy, objective, clip_fraction })
}

/// Records the clipped value loss on `tape`, to be minimized.
pub fn critic_term(tape: &mut Tape, critic: &Mlp, vars: &[Var], batch: &CriticBatch, value_clip: f64) -> Result<Var> {
    let n = batch.returns.len();
    if n == 0 {
        return Err(Error::Empty("critic batch"));
    }
    if batch.states.rows() != n || batch.old_values.len() != n {
        return Err(Error::invalid("critic batch", "row counts differ"));
    }
    let x = tape.leaf(batch.states.clone());
    let out = critic.forward_on(tape, vars, x)?;
    let v = tape.reshape(out, vec![n])?;
    let ret = tape.leaf(Tensor::vector(batch.returns.clone()));
    let lo = batch.old_values.iter().map(|o| o - value_clip).collect();
    let hi = batch.old_values.iter().map(|o| o + value_clip).collect();
    let vc = tape.clamp(v, lo, hi)?;
    let e1 = tape.sub(v, ret)?;
    let e2 = tape.sub(vc, ret)?;
    let s1 = tape.square(e1);
    let s2 = tape.square(e2);
    let worst = tape.maximum(s1, s2)?;
    Ok(tape.mean(worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use crate::seed::rng_from_seed;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    #[test]
    fn zero_head_is_uniform() {
        let actor = Mlp::zeros(&[4, 8, 5]).unwrap();
        let p = policy_distribution(&actor, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn softmax_arithmetic() {
        let p = softmax(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 4.0)).abs() < 1e-15);
        assert!((p[0] - 0.4046).abs() < 1e-4);
    }

    #[test]
    fn surrogate_clip_examples() {
        assert_eq!(clipped_surrogate(2.0, 1.0, 0.2), 1.2);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) - -0.8).abs() < 1e-15);
    }

    #[test]
    fn value_clip_examples() {
        assert_eq!(clipped_value_error(0.0, 0.0, 0.0, 0.2), 0.0);
        assert_eq!(clipped_value_error(1.0, 0.0, 0.0, 0.2), 1.0);
        assert!((clipped_value_error(0.1, 0.0, 1.0, 0.2) - 0.81).abs() < 1e-15);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.0, 1.0, 1.0, 0.5]), 1);
        assert_eq!(argmax(&[0.0; 5]), 0);
    }

    #[test]
    fn sampling_frequencies() {
        let mut rng = rng_from_seed(5);
        let p = [0.1, 0.2, 0.3, 0.4, 0.0];
        let mut counts = [0usize; 5];
        for _ in 0..40_000 {
            counts[sample_action(&p, &mut rng)] += 1;
        }
        for k in 0..5 {
            assert!((counts[k] as f64 / 40_000.0 - p[k]).abs() < 0.01);
        }
        assert_eq!(counts[4], 0);
    }

    fn tiny_batch(actor: &Mlp, n: usize, seed: u64) -> ActorBatch {
        let mut rng = rng_from_seed(seed);
        let d = actor.input_dim();
        let obs = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap();
        let out = actor.forward_batch(&obs).unwrap();
        let mut actions = Vec::new();
        let mut old = Vec::new();
        for r in 0..n {
            let p = softmax(out.row(r));
            let a = sample_action(&p, &mut rng);
            actions.push(a);
            old.push(p[a].ln());
        }
        let advantages = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        ActorBatch { obs, actions, old_log_probs: old, advantages }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn surrogate_at_behavior_policy_is_mean_advantage(seed in 0u64..1000) {
            let actor = Mlp::new(&[3, 6, 5], 2f64.sqrt(), 1.0, &mut rng_from_seed(seed)).unwrap();
            let batch = tiny_batch(&actor, 7, seed + 1);
            let mut tape = Tape::new();
            let vars = actor.params.bind(&mut tape);
            let t = actor_terms(&mut tape, &actor, &vars, &batch, 0.2, 0.01).unwrap();
            let mean_adv = batch.advantages.iter().sum::<f64>() / 7.0;
            prop_assert!((tape.value(t.surrogate).item() - mean_adv).abs() < 1e-12);
            let ent = tape.value(t.entropy).item();
            prop_assert!((tape.value(t.objective).item() - (mean_adv + 0.01 * ent)).abs() < 1e-12);
            prop_assert!(ent >= 0.0 && ent <= 5f64.ln() + 1e-12);
            prop_assert_eq!(t.clip_fraction, 0.0);
        }

        #[test]
        fn clip_fraction_in_unit_interval(seed in 0u64..1000) {
            let actor = Mlp::new(&[3, 6, 5], 2f64.sqrt(), 1.0, &mut rng_from_seed(seed)).unwrap();
            let mut batch = tiny_batch(&actor, 9, seed + 7);
            batch.old_log_probs.iter_mut().enumerate().for_each(|(k, l)| *l -= 0.3 * k as f64);
            let mut tape = Tape::new();
            let vars = actor.params.bind(&mut tape);
            let t = actor_terms(&mut tape, &actor, &vars, &batch, 0.2, 0.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&t.clip_fraction));
        }
    }
}
