mod common;

use std::sync::Arc;

use cliquepart::env::EnvState;
use cliquepart::neural::{actor_forward, critic_forward, encode_observation, ActorCritic, Checkpoint};
use cliquepart::policy::{rollout, Policy};
use cliquepart::Error;

use common::*;

#[test]
fn gradients_match_central_differences() {
    for seed in 0..12 {
        let g = gradient_check(seed, 3 + seed as usize % 8, 1e-4, 1e-6, 32);
        assert!(g.worst <= 1e-4, "seed {seed}: {} at {} (analytic {}, numeric {})", g.worst, g.worst_at, g.analytic, g.numeric);
        assert!(g.straddled * 100 < g.checked);
    }
}

#[test]
fn actor_is_permutation_equivariant() {
    for seed in 0..20 {
        let err = equivariance_error(seed, 4 + seed as usize % 10);
        assert!(err <= 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn probabilities_form_a_distribution() {
    for seed in 0..10 {
        let state = random_open_state(9, seed);
        let model = ActorCritic::init(8, 9, seed);
        let dist = actor_forward(&encode_observation(&state), &model).unwrap();
        assert_eq!(dist.actions, state.legal_actions());
        let total: f64 = dist.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(dist.entropy() >= 0.0 && dist.entropy() <= (dist.actions.len() as f64).ln() + 1e-12);
    }
}

#[test]
fn critic_rejects_other_sizes() {
    let model = ActorCritic::init(8, 6, 0);
    let state = random_open_state(7, 0);
    assert!(matches!(critic_forward(&state, &model), Err(Error::Dimension { .. })));
    assert!(actor_forward(&encode_observation(&state), &model).is_ok());
}

#[test]
fn checkpoint_reload_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let model = ActorCritic::init(8, 8, 11);
    Checkpoint::from_model(&model).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap().to_model().unwrap();
    assert_eq!(loaded, model);
    for seed in 0..5 {
        let state = random_open_state(8, seed);
        let obs = encode_observation(&state);
        let a = actor_forward(&obs, &model).unwrap();
        let b = actor_forward(&obs, &loaded).unwrap();
        assert_eq!(a.log_probs.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.log_probs.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(critic_forward(&state, &model).unwrap().to_bits(), critic_forward(&state, &loaded).unwrap().to_bits());
    }
}

#[test]
fn damaged_checkpoints_are_refused() {
    let model = ActorCritic::init(8, 5, 0);
    let mut ck = Checkpoint::from_model(&model);
    ck.params[3].data.pop();
    assert!(matches!(ck.to_model(), Err(Error::Checkpoint(_))));
    let mut ck = Checkpoint::from_model(&model);
    ck.params.swap(0, 1);
    assert!(matches!(ck.to_model(), Err(Error::Checkpoint(_))));
    let mut ck = Checkpoint::from_model(&model);
    ck.header.format_version = 99;
    assert!(matches!(ck.to_model(), Err(Error::Checkpoint(_))));
}

#[test]
fn neural_rollouts_are_seeded() {
    let model = ActorCritic::init(8, 12, 4);
    let inst = Arc::new(mixed_instance(12, 60.0, 3));
    let policy = cliquepart::neural::NeuralPolicy::new(&model, cliquepart::neural::Decoding::Sample);
    let a = rollout(inst.clone(), &policy, 17).unwrap();
    let b = rollout(inst.clone(), &policy, 17).unwrap();
    assert_eq!(a.trajectory.actions(), b.trajectory.actions());
    let logs_a: Vec<u64> = a.trajectory.steps.iter().map(|t| t.log_prob.to_bits()).collect();
    let logs_b: Vec<u64> = b.trajectory.steps.iter().map(|t| t.log_prob.to_bits()).collect();
    assert_eq!(logs_a, logs_b);
    let mut r = rng(0);
    let state = EnvState::reset(inst);
    let decision = policy.decide(&state, &mut r).unwrap();
    assert!(decision.action_log_prob <= 0.0);
    assert!((decision.action_distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}
