#![allow(dead_code)]

use std::sync::Arc;

use cliquepart::env::EnvState;
use cliquepart::instance::{generate_cities, generate_general};
use cliquepart::policy::{rollout, RandomPolicy};
use cliquepart::ppo::{build_samples, Sample, TrainConfig};
use cliquepart::{CitiesConfig, GeneralConfig, Instance, Partition};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cities instance for odd seeds, general instance for even seeds.
pub fn mixed_instance(n: usize, threshold: f64, seed: u64) -> Instance {
    let inst = if seed % 2 == 1 {
        let mut cfg = CitiesConfig::new(n, seed);
        cfg.threshold = threshold;
        generate_cities(&cfg)
    } else {
        let mut cfg = GeneralConfig::new(n, seed);
        cfg.threshold = threshold;
        generate_general(&cfg)
    };
    inst.expect("generator output is valid")
}

/// Partition produced by a random sequence of feasible merges.
pub fn random_feasible_partition(inst: &Instance, seed: u64) -> Partition {
    let mut r = rng(seed);
    let mut state = EnvState::reset(Arc::new(inst.clone()));
    let stop = r.random_range(0..=inst.n());
    while !state.is_terminal() && state.step_count() < stop {
        let legal = state.legal_actions();
        let e = legal[r.random_range(0..legal.len())];
        state.step(e).unwrap();
    }
    state.current_partition()
}

/// Relabels sites: site `i` of `inst` becomes site `perm[i]`.
pub fn permute_instance(inst: &Instance, perm: &[usize]) -> Instance {
    let n = inst.n();
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            rows[perm[i]][perm[j]] = inst.d(i, j);
        }
    }
    Instance::new(inst.threshold(), rows).unwrap()
}

pub fn random_permutation(n: usize, r: &mut impl Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(r);
    perm
}

pub fn map_edge(e: (usize, usize), perm: &[usize]) -> (usize, usize) {
    cliquepart::edge(perm[e.0], perm[e.1])
}

/// Instance with every off-diagonal distance drawn from a small integer grid,
/// which makes ties and threshold-equal distances common.
pub fn grid_instance(n: usize, threshold: f64, values: &[f64], seed: u64) -> Instance {
    let mut r = rng(seed);
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = values[r.random_range(0..values.len())];
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    Instance::new(threshold, rows).unwrap()
}

/// PPO samples from sampled rollouts of `model` on `inst`.
pub fn policy_samples(model: &cliquepart::neural::ActorCritic, inst: &Instance, episodes: u64, cfg: &TrainConfig) -> Vec<Sample> {
    let inst = Arc::new(inst.clone());
    let policy = cliquepart::neural::NeuralPolicy::new(model, cliquepart::neural::Decoding::Sample);
    let trajs: Vec<_> = (0..episodes).map(|s| rollout(inst.clone(), &policy, s).unwrap().trajectory).collect();
    build_samples(&trajs, cfg).unwrap()
}

pub fn random_rollout_objective(inst: &Instance, seed: u64) -> f64 {
    rollout(Arc::new(inst.clone()), &RandomPolicy, seed).unwrap().objective
}

/// Random non-terminal state of a random instance with `n` sites.
pub fn random_open_state(n: usize, seed: u64) -> EnvState {
    let mut r = rng(seed);
    for attempt in 0.. {
        let d = [30.0, 60.0, 120.0][r.random_range(0..3)];
        let inst = mixed_instance(n, d, seed.wrapping_mul(31).wrapping_add(attempt));
        let mut state = EnvState::reset(Arc::new(inst));
        if state.is_terminal() {
            continue;
        }
        let steps = r.random_range(0..n);
        for _ in 0..steps {
            let legal = state.legal_actions();
            let next = legal[r.random_range(0..legal.len())];
            let mut probe = state.clone();
            probe.step(next).unwrap();
            if probe.is_terminal() {
                break;
            }
            state = probe;
        }
        return state;
    }
    unreachable!()
}

/// Worst relative disagreement found by [`gradient_check`] and where it occurred.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub worst: f64,
    pub worst_at: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates whose +-h probe crossed a ReLU, clamp or min boundary.
    pub straddled: usize,
}

fn branch_pattern(model: &cliquepart::neural::ActorCritic, sample: &Sample, cfg: &TrainConfig) -> Vec<u8> {
    let mut tape = cliquepart::autodiff::Tape::new();
    let vars = model.bind_frozen(&mut tape);
    cliquepart::ppo::sample_loss(&mut tape, &vars, sample, cfg).unwrap();
    tape.branch_pattern()
}

/// Compares analytic gradients of the per-sample PPO loss with central
/// differences. Every actor coordinate is checked; each critic tensor
/// contributes `critic_coords` seeded coordinates (or all of them if smaller).
/// Coordinates whose probes leave the smooth piece of the loss are counted
/// in `straddled` instead of compared. Relative error uses the denominator
/// `max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(seed: u64, n: usize, h: f64, floor: f64, critic_coords: usize) -> GradCheck {
    use cliquepart::neural::{self, ActorCritic};
    use cliquepart::ppo::{sample_loss_and_grad, sample_loss_value};

    let mut r = rng(seed ^ 0xfd);
    let state = random_open_state(n, seed);
    let cfg = TrainConfig::default();
    let model = ActorCritic::init(8, n, seed);
    let obs = neural::encode_observation(&state);
    let dist = neural::actor_forward(&obs, &model).unwrap();
    let action_index = r.random_range(0..obs.actions.len());
    let offset = if r.random_bool(0.5) { r.random_range(-0.1..0.1) } else { r.random_range(-0.6..0.6) };
    let sample = Sample {
        critic_input: neural::critic_input(&state),
        obs,
        action_index,
        old_log_prob: dist.log_probs[action_index] + offset,
        advantage: r.random_range(-2.0..2.0),
        ret: r.random_range(-5.0..5.0),
    };
    let (_, grads) = sample_loss_and_grad(&model, &sample, &cfg).unwrap();
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut result = GradCheck {
        worst: 0.0,
        worst_at: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        straddled: 0,
    };
    let pattern = branch_pattern(&model, &sample, &cfg);
    let mut probe = model.clone();
    for (t, name) in names.iter().enumerate() {
        let len = grads[t].len();
        let coords: Vec<usize> = if name.starts_with("critic.") && len > critic_coords {
            (0..critic_coords).map(|_| r.random_range(0..len)).collect()
        } else {
            (0..len).collect()
        };
        for k in coords {
            let original = probe.tensors()[t].data[k];
            probe.tensors_mut()[t].data[k] = original + h;
            let up = sample_loss_value(&probe, &sample, &cfg).unwrap();
            let smooth_up = branch_pattern(&probe, &sample, &cfg) == pattern;
            probe.tensors_mut()[t].data[k] = original - h;
            let down = sample_loss_value(&probe, &sample, &cfg).unwrap();
            let smooth_down = branch_pattern(&probe, &sample, &cfg) == pattern;
            probe.tensors_mut()[t].data[k] = original;
            if !(smooth_up && smooth_down) {
                result.straddled += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[t].data[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            result.checked += 1;
            if rel > result.worst {
                result.worst = rel;
                result.worst_at = format!("{name}[{k}]");
                result.analytic = analytic;
                result.numeric = numeric;
            }
        }
    }
    result
}

/// Worst probability mismatch between a state and its relabeled copy.
pub fn equivariance_error(seed: u64, n: usize) -> f64 {
    let mut r = rng(seed);
    use cliquepart::neural::{actor_forward, encode_observation, ActorCritic};

    let model = ActorCritic::init(8, n, seed);
    let state = random_open_state(n, seed);
    let perm = random_permutation(n, &mut r);
    let moved = permute_instance(state.instance(), &perm);
    let mut other = EnvState::reset(Arc::new(moved));
    // Rebuild the same clusters by merging along each cluster's members.
    for c in state.current_partition().clusters() {
        for w in c.windows(2) {
            let e = map_edge((w[0], w[1]), &perm);
            if other.cluster_of(e.0) != other.cluster_of(e.1) {
                other.step(e).unwrap();
            }
        }
    }
    let a = actor_forward(&encode_observation(&state), &model).unwrap();
    let b = actor_forward(&encode_observation(&other), &model).unwrap();
    assert_eq!(a.actions.len(), b.actions.len());
    let pb = b.probs();
    let mut worst: f64 = 0.0;
    for (e, p) in a.actions.iter().zip(a.probs()) {
        let k = b.actions.iter().position(|x| *x == map_edge(*e, &perm)).expect("mapped action is legal");
        worst = worst.max((p - pb[k]).abs());
    }
    worst
}
