//! Policy abstraction, the random and greedy baselines, and episode rollouts.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvState, EpisodeRecord};
use crate::error::{Edge, Error, Result};
use crate::instance::Instance;

/// RNG used for every stochastic decision in the crate.
pub type PolicyRng = ChaCha8Rng;

pub fn policy_rng(seed: u64) -> PolicyRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Chosen action plus the distribution it was drawn from, aligned with
/// [`EnvState::legal_actions`].
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyDecision {
    pub action: Edge,
    pub action_index: usize,
    pub action_log_prob: f64,
    pub action_distribution: Vec<f64>,
}

pub trait Policy: Sync {
    fn decide(&self, state: &EnvState, rng: &mut PolicyRng) -> Result<PolicyDecision>;

    /// Value estimate in scaled-reward units, for policies that carry a critic.
    fn value(&self, _state: &EnvState) -> Result<Option<f64>> {
        Ok(None)
    }
}

/// Uniform choice over legal edges.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn decide(&self, state: &EnvState, rng: &mut PolicyRng) -> Result<PolicyDecision> {
        let legal = state.legal_actions();
        if legal.is_empty() {
            return Err(Error::NoAction);
        }
        let k = legal.len();
        let index = rng.random_range(0..k);
        Ok(PolicyDecision {
            action: legal[index],
            action_index: index,
            action_log_prob: -(k as f64).ln(),
            action_distribution: vec![1.0 / k as f64; k],
        })
    }
}

pub fn random_policy(state: &EnvState, seed: u64) -> Result<PolicyDecision> {
    RandomPolicy.decide(state, &mut policy_rng(seed))
}

/// Picks the legal edge whose merge yields the largest immediate objective decrease.
#[derive(Clone, Copy, Debug, Default)]
pub struct GreedyPolicy;

impl Policy for GreedyPolicy {
    fn decide(&self, state: &EnvState, _rng: &mut PolicyRng) -> Result<PolicyDecision> {
        greedy_policy(state)
    }
}

pub fn greedy_policy(state: &EnvState) -> Result<PolicyDecision> {
    let legal = state.legal_actions();
    let mut best: Option<(usize, f64)> = None;
    for (index, &e) in legal.iter().enumerate() {
        let gain = state.merge_savings(e);
        // Strict comparison keeps the lexicographically first edge on ties.
        if best.is_none_or(|(_, g)| gain > g) {
            best = Some((index, gain));
        }
    }
    let (index, _) = best.ok_or(Error::NoAction)?;
    let mut dist = vec![0.0; legal.len()];
    dist[index] = 1.0;
    Ok(PolicyDecision {
        action: legal[index],
        action_index: index,
        action_log_prob: 0.0,
        action_distribution: dist,
    })
}

/// One recorded decision. `state` is the observation the decision was made on.
#[derive(Clone, Debug)]
pub struct Transition {
    pub state: EnvState,
    pub action: Edge,
    pub action_index: usize,
    pub log_prob: f64,
    /// Reward divided by the threshold.
    pub reward: f64,
    pub raw_reward: f64,
    pub value: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
    pub terminal: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Sum of scaled rewards.
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|t| t.reward).sum()
    }

    pub fn actions(&self) -> Vec<Edge> {
        self.steps.iter().map(|t| t.action).collect()
    }
}

/// Completed episode.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub final_state: EnvState,
    pub objective: f64,
    pub log: Vec<EpisodeRecord>,
}

/// Runs `policy` from reset until no edge is left.
pub fn rollout<P: Policy + ?Sized>(instance: Arc<Instance>, policy: &P, seed: u64) -> Result<Rollout> {
    rollout_with(instance, policy, &mut policy_rng(seed), false)
}

/// Like [`rollout`], also producing the per-step episode log.
pub fn rollout_logged<P: Policy + ?Sized>(instance: Arc<Instance>, policy: &P, seed: u64) -> Result<Rollout> {
    rollout_with(instance, policy, &mut policy_rng(seed), true)
}

pub fn rollout_with<P: Policy + ?Sized>(
    instance: Arc<Instance>,
    policy: &P,
    rng: &mut PolicyRng,
    keep_log: bool,
) -> Result<Rollout> {
    let scale = 1.0 / instance.threshold();
    let mut state = EnvState::reset(instance);
    let mut trajectory = Trajectory::default();
    let mut log = Vec::new();
    while !state.is_terminal() {
        let decision = policy.decide(&state, rng)?;
        if !state.is_available(decision.action) {
            return Err(Error::ContractViolation(decision.action));
        }
        let value = policy.value(&state)?;
        let snapshot = state.clone();
        let outcome = state.step(decision.action)?;
        if keep_log {
            log.push(EpisodeRecord::new(state.step_count() - 1, decision.action, &outcome, state.objective()));
        }
        trajectory.steps.push(Transition {
            state: snapshot,
            action: decision.action,
            action_index: decision.action_index,
            log_prob: decision.action_log_prob,
            reward: outcome.reward * scale,
            raw_reward: outcome.reward,
            value,
        });
    }
    trajectory.terminal = true;
    let objective = state.objective();
    Ok(Rollout {
        trajectory,
        final_state: state,
        objective,
        log,
    })
}

/// Best of `episodes` independent random rollouts, seeded `seed, seed + 1, ...`.
pub fn best_of_random(instance: Arc<Instance>, episodes: usize, seed: u64) -> Result<Rollout> {
    let mut best: Option<Rollout> = None;
    for k in 0..episodes.max(1) as u64 {
        let r = rollout_logged(instance.clone(), &RandomPolicy, seed.wrapping_add(k))?;
        if best.as_ref().is_none_or(|b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one episode"))
}
