use uav_aou::baselines::{train_offpolicy, MixerConfig, MixerMode};
use uav_aou::env::Environment;
use uav_aou::mappo::{evaluate, train, uniform_actor, EvalMode, TrainConfig};
use uav_aou::meta::smooth;
use uav_aou::oracle;
use uav_aou::presets;

#[test]
fn smoothed_reward_trend_is_non_decreasing_over_thirds() {
    let cfg = TrainConfig { epochs: 300, seed: 0, ..TrainConfig::default() };
    let out = train(presets::tiny(), &cfg, |_, _| Ok(())).unwrap();
    let curve = smooth(&out.metrics.iter().map(|r| r.mean_reward).collect::<Vec<_>>(), 10);
    let third = curve.len() / 3;
    let means: Vec<f64> = (0..3).map(|k| curve[k * third..(k + 1) * third].iter().sum::<f64>() / third as f64).collect();
    assert!(means[0] <= means[1] && means[1] <= means[2], "{means:?}");
}

#[test]
fn trained_actor_beats_random_on_aou() {
    let env = Environment::new(presets::tiny()).unwrap();
    let cfg = TrainConfig { epochs: 300, seed: 2, ..TrainConfig::default() };
    let out = train(presets::tiny(), &cfg, |_, _| Ok(())).unwrap();
    let trained = evaluate(&out.ac.actor, &env, 32, EvalMode::Sample, 0).unwrap();
    let random = evaluate(&uniform_actor(&env), &env, 32, EvalMode::Sample, 0).unwrap();
    assert!(trained.mean.total_aou < random.mean.total_aou, "{} vs {}", trained.mean.total_aou, random.mean.total_aou);
}

#[test]
fn epsilon_one_matches_uniform_expectation() {
    let s = presets::tiny();
    let exact = oracle::uniform_expected_return(&s).unwrap();
    let cfg = MixerConfig { epsilon_start: 1.0, epsilon_end: 1.0, episodes_per_row: 100, ..MixerConfig::default() };
    let out = train_offpolicy(s, &cfg, 20 * 100 * 5).unwrap();
    let rewards: Vec<f64> = out.metrics.iter().map(|r| r.mean_reward).collect();
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    // Row means of 100 episodes; the standard error of their average sets the tolerance.
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (rewards.len() - 1) as f64;
    let se = (var / rewards.len() as f64).sqrt();
    assert!((mean - exact).abs() < 4.0 * se + 1e-9, "mean {mean} exact {exact} se {se}");
    assert!(out.metrics.iter().all(|r| (r.entropy - 5f64.ln()).abs() < 1e-12));
}

#[test]
fn value_decomposition_reaches_most_of_the_optimum_on_tiny() {
    let s = presets::tiny();
    let optimum = oracle::solve(&s).unwrap().optimal_return;
    let env = Environment::new(s.clone()).unwrap();
    for mode in [MixerMode::Additive, MixerMode::Monotonic] {
        let best = (0..3)
            .map(|seed| {
                let cfg = MixerConfig { mode, seed, ..MixerConfig::default() };
                let out = train_offpolicy(s.clone(), &cfg, 20_000).unwrap();
                evaluate(&out.agent, &env, 1, EvalMode::Argmax, 0).unwrap().mean.reward
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best >= 0.8 * optimum, "{mode:?}: {best} vs {optimum}");
    }
}
