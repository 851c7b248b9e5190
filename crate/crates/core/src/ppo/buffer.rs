use crate::{Error, Result};

/// Generalized advantage estimates and returns for one trajectory.
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.is_empty() {
        return Err(Error::Empty("reward sequence"));
    }
    if rewards.len() != values.len() {
        return Err(Error::invalid("values", format!("{} values for {} rewards", values.len(), rewards.len())));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// On-policy experience, one entry per timestep with `agents` actor rows each.
///
/// Team reward and the centralized value are stored once per timestep and
/// shared by every agent row of that timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    agents: usize,
    obs_dim: usize,
    state_dim: usize,
    obs: Vec<f64>,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    states: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
    open: usize,
    episode_returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(agents: usize, obs_dim: usize, state_dim: usize) -> Self {
        Self {
            agents,
            obs_dim,
            state_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            states: Vec::new(),
            rewards: Vec::new(),
            values: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
            open: 0,
            episode_returns: Vec::new(),
        }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Number of timesteps stored.
    pub fn steps(&self) -> usize {
        self.rewards.len()
    }

    /// Number of (agent, timestep) entries.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn clear(&mut self) {
        *self = Self::new(self.agents, self.obs_dim, self.state_dim);
    }

    pub fn push_step(
        &mut self,
        obs: &[Vec<f64>],
        actions: &[usize],
        log_probs: &[f64],
        state: &[f64],
        reward: f64,
        value: f64,
    ) -> Result<()> {
        if obs.len() != self.agents || actions.len() != self.agents || log_probs.len() != self.agents {
            return Err(Error::invalid("rollout step", format!("expected {} agent entries", self.agents)));
        }
        if obs.iter().any(|o| o.len() != self.obs_dim) || state.len() != self.state_dim {
            return Err(Error::invalid("rollout step", "observation or state dimension mismatch"));
        }
        if !reward.is_finite() || !value.is_finite() {
            return Err(Error::NonFinite("reward or value in rollout".into()));
        }
        for o in obs {
            self.obs.extend_from_slice(o);
        }
        self.actions.extend_from_slice(actions);
        self.log_probs.extend_from_slice(log_probs);
        self.states.extend_from_slice(state);
        self.rewards.push(reward);
        self.values.push(value);
        Ok(())
    }

    /// Closes the open trajectory, filling its advantages and returns.
    pub fn finish_trajectory(&mut self, bootstrap: f64, gamma: f64, lambda: f64) -> Result<()> {
        let start = self.open;
        let (adv, ret) = gae(&self.rewards[start..], &self.values[start..], bootstrap, gamma, lambda)?;
        self.advantages.extend(adv);
        self.returns.extend(ret);
        self.episode_returns.push(self.rewards[start..].iter().sum());
        self.open = self.rewards.len();
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.open == self.rewards.len() && !self.rewards.is_empty()
    }

    pub fn obs_row(&self, row: usize) -> &[f64] {
        &self.obs[row * self.obs_dim..(row + 1) * self.obs_dim]
    }

    pub fn state(&self, step: usize) -> &[f64] {
        &self.states[step * self.state_dim..(step + 1) * self.state_dim]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn advantages(&self) -> &[f64] {
        &self.advantages
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    /// Undiscounted reward sum of each finished trajectory.
    pub fn episode_returns(&self) -> &[f64] {
        &self.episode_returns
    }

    /// Per-row view of the shared reward.
    pub fn row_reward(&self, row: usize) -> f64 {
        self.rewards[row / self.agents]
    }

    pub fn row_value(&self, row: usize) -> f64 {
        self.values[row / self.agents]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_reward() {
        let (adv, ret) = gae(&[1.0], &[0.0], 0.0, 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![1.0]);
        assert_eq!(ret, vec![1.0]);
    }

    #[test]
    fn discounted_returns() {
        let (_, ret) = gae(&[1.0, 1.0, 1.0], &[0.0; 3], 0.0, 0.5, 1.0).unwrap();
        assert_eq!(ret, vec![1.75, 1.5, 1.0]);
    }

    #[test]
    fn perfect_critic_zero_advantage() {
        let r = [0.5, -1.0, 2.0, 0.25];
        let gamma = 0.9;
        let mut v = vec![0.0; 4];
        let mut acc = 0.0;
        for t in (0..4).rev() {
            acc = r[t] + gamma * acc;
            v[t] = acc;
        }
        let (adv, _) = gae(&r, &v, 0.0, gamma, 0.7).unwrap();
        assert!(adv.iter().all(|a| a.abs() < 1e-12));
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(matches!(gae(&[], &[], 0.0, 0.9, 0.9), Err(Error::Empty(_))));
    }

    #[test]
    fn buffer_shapes() {
        let mut b = RolloutBuffer::new(2, 3, 4);
        for t in 0..5 {
            let obs = vec![vec![t as f64; 3]; 2];
            b.push_step(&obs, &[0, 1], &[-1.0, -1.5], &[0.0; 4], 1.0, 0.5).unwrap();
        }
        assert!(!b.is_complete());
        b.finish_trajectory(0.0, 0.99, 0.95).unwrap();
        assert!(b.is_complete());
        assert_eq!(b.len(), 10);
        assert_eq!(b.steps(), 5);
        assert_eq!(b.obs_row(3), &[1.0, 1.0, 1.0]);
        assert_eq!(b.row_value(9), 0.5);
        assert_eq!(b.episode_returns(), &[5.0]);
        assert!(b.push_step(&[vec![0.0; 3]], &[0], &[0.0], &[0.0; 4], 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn gae_unit_params_is_reward_to_go(r in prop::collection::vec(-5.0f64..5.0, 1..=20)) {
            let n = r.len();
            let (adv, ret) = gae(&r, &vec![0.0; n], 0.0, 1.0, 1.0).unwrap();
            for t in 0..n {
                let brute: f64 = r[t..].iter().sum();
                prop_assert!((adv[t] - brute).abs() < 1e-12);
                prop_assert_eq!(adv[t], ret[t]);
            }
        }

        #[test]
        fn gae_matches_td_lambda_sum(
            r in prop::collection::vec(-2.0f64..2.0, 1..=12),
            seed_v in prop::collection::vec(-2.0f64..2.0, 13),
            gamma in 0.0f64..=1.0,
            lambda in 0.0f64..=1.0,
            boot in -1.0f64..1.0,
        ) {
            let n = r.len();
            let v = &seed_v[..n];
            let (adv, _) = gae(&r, v, boot, gamma, lambda).unwrap();
            for t in 0..n {
                // Direct sum of discounted TD residuals.
                let mut want = 0.0;
                for k in t..n {
                    let next = if k + 1 < n { v[k + 1] } else { boot };
                    let delta = r[k] + gamma * next - v[k];
                    want += (gamma * lambda).powi((k - t) as i32) * delta;
                }
                prop_assert!((adv[t] - want).abs() < 1e-9);
            }
        }
    }
}
