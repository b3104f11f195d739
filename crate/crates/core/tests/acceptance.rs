//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any fails. Criterion 8 trains with the default config,
//! so expect this target to dominate `cargo test` time.

mod common;

use std::fs;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use cliquepart::bench::{run_generated_suite, verify_figure1, Method, ReferenceMode};
use cliquepart::exact::{brute_force_reference, solve_exact_dp};
use cliquepart::neural::{ActorCritic, Decoding, NeuralPolicy};
use cliquepart::policy::{rollout, GreedyPolicy, RandomPolicy, Rollout};
use cliquepart::ppo::{train, InstanceSource, TrainConfig};
use cliquepart::{evaluate, near_pairs, savings, EnvKind, InstanceSpec};
use rand::Rng;

use common::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn figure1() -> Outcome {
    let start = Instant::now();
    let report = verify_figure1();
    let elapsed = start.elapsed();
    let detail = match report.first_failure() {
        Some(fail) => format!("failed at '{}': {}", fail.name, fail.detail),
        None => format!("{} checks", report.checks.len()),
    };
    outcome(report.passed() && within(elapsed, Duration::from_secs(1)), detail)
}

fn dp_vs_brute_force() -> Outcome {
    let start = Instant::now();
    let (mut count, mut worst) = (0usize, 0.0f64);
    for (gen, d) in [0u64, 1].into_iter().flat_map(|g| [30.0, 60.0, 120.0].map(|d| (g, d))) {
        for n in 2..=9 {
            for rep in 0..5u64 {
                let seed = 2 * (1000 * n as u64 + 10 * d as u64 + rep) + gen;
                let inst = mixed_instance(n, d, seed);
                let dp = solve_exact_dp(&inst).unwrap().objective;
                let brute = brute_force_reference(&inst).unwrap();
                worst = worst.max((dp - brute).abs());
                count += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        count >= 200 && worst <= 1e-9 && within(elapsed, Duration::from_secs(60)),
        format!("{count} instances, worst difference {worst:e}"),
    )
}

fn return_identity() -> Outcome {
    let start = Instant::now();
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for k in 0..1000u64 {
        let n = r.random_range(2..=30);
        let d = [30.0, 60.0, 120.0][r.random_range(0..3)];
        let inst = Arc::new(mixed_instance(n, d, k));
        let reset = cliquepart::env::EnvState::reset(inst.clone()).objective();
        let run = rollout(inst, &RandomPolicy, k).unwrap();
        let lhs = run.trajectory.total_reward() * d;
        worst = worst.max((lhs - (reset - run.objective)).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && within(elapsed, Duration::from_secs(60)),
        format!("1000 rollouts, worst difference {worst:e}"),
    )
}

fn savings_identity() -> Outcome {
    let start = Instant::now();
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for k in 0..1000u64 {
        let n = r.random_range(2..=30);
        let d = [30.0, 60.0, 120.0][r.random_range(0..3)];
        let inst = mixed_instance(n, d, k + 50_000);
        let p = random_feasible_partition(&inst, k);
        let direct = evaluate(&inst, &p).unwrap();
        let saved: f64 = p.clusters().iter().map(|c| savings(&inst, c).unwrap()).sum();
        let via_savings = d * near_pairs(&inst).len() as f64 - saved;
        worst = worst.max((direct - via_savings).abs() / direct.abs().max(1.0));
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && within(elapsed, Duration::from_secs(10)),
        format!("1000 partitions, worst relative difference {worst:e}"),
    )
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let (mut worst, mut checked, mut straddled) = (0.0f64, 0usize, 0usize);
    let mut worst_seed = 0;
    for seed in 0..100u64 {
        let g = gradient_check(seed, 3 + seed as usize % 8, 1e-4, 1e-6, 32);
        if g.worst > worst {
            worst = g.worst;
            worst_seed = seed;
        }
        checked += g.checked;
        straddled += g.straddled;
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-4 && within(elapsed, Duration::from_secs(300)),
        format!("100 graphs, {checked} coordinates, worst relative error {worst:.2e} (seed {worst_seed}), {straddled} kink-straddling probes skipped"),
    )
}

fn equivariance() -> Outcome {
    let worst = (0..100u64).map(|seed| equivariance_error(seed + 1000, 4 + seed as usize % 7)).fold(0.0, f64::max);
    outcome(worst <= 1e-6, format!("100 relabelings, worst probability difference {worst:e}"))
}

fn exact_scale() -> Outcome {
    let mut parts = Vec::new();
    let mut passed = true;
    for (n, limit, threshold) in [(16usize, 60u64, 60.0), (16, 60, 120.0), (18, 900, 60.0), (18, 900, 120.0)] {
        let spec = InstanceSpec { env: EnvKind::General, n, threshold, seed_base: 7 };
        let inst = spec.generate(0).unwrap();
        let start = Instant::now();
        let sol = solve_exact_dp(&inst).unwrap();
        let elapsed = start.elapsed();
        passed &= within(elapsed, Duration::from_secs(limit)) && sol.objective > 0.0;
        parts.push(format!("n={n} D={threshold} in {:.2}s", elapsed.as_secs_f64()));
    }
    outcome(passed, parts.join(", "))
}

/// Criteria 8 and 9 share one evaluation suite.
fn training_and_baselines() -> (Outcome, Outcome) {
    let cfg = TrainConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let trained = train(&cfg, dir.path(), None).unwrap();
    let train_time = start.elapsed();
    let methods = vec![
        Method::Random { episodes: 1 },
        Method::Greedy,
        Method::Policy { label: "trained".into(), model: Arc::new(trained.model) },
    ];
    let report = run_generated_suite(&methods, &cfg.instances.eval_spec(), cfg.instances.eval_pool_size, ReferenceMode::ExactDp).unwrap();
    print!("{}", report.table());
    let mean = |m: &str| report.aggregate(m).unwrap().mean;
    let (random, greedy, policy) = (mean("random"), mean("greedy"), mean("trained"));
    let training = outcome(
        policy <= 0.5 * random && policy <= 0.05,
        format!(
            "{} batches in {:.0}s; trained {:.3}% vs random {:.3}% (limit {:.3}%)",
            cfg.total_batches,
            train_time.as_secs_f64(),
            100.0 * policy,
            100.0 * random,
            100.0 * (0.5 * random).min(0.05)
        ),
    );
    let ordering = outcome(greedy <= random, format!("greedy {:.3}% vs random {:.3}%", 100.0 * greedy, 100.0 * random));
    (training, ordering)
}

fn rollout_fingerprint(r: &Rollout) -> Vec<u64> {
    let mut out: Vec<u64> = r.trajectory.actions().iter().flat_map(|e| [e.0 as u64, e.1 as u64]).collect();
    out.extend(r.trajectory.steps.iter().map(|t| t.log_prob.to_bits()));
    out.push(r.objective.to_bits());
    out
}

fn determinism() -> Outcome {
    let mut same = true;
    for env in [EnvKind::Cities, EnvKind::General] {
        let spec = InstanceSpec { env, n: 20, threshold: 60.0, seed_base: 11 };
        for k in 0..8 {
            same &= spec.generate(k).unwrap().to_json().unwrap() == spec.generate(k).unwrap().to_json().unwrap();
        }
    }
    let inst = Arc::new(mixed_instance(14, 60.0, 5));
    let model = ActorCritic::init(8, 14, 3);
    let neural = NeuralPolicy::new(&model, Decoding::Sample);
    for seed in 0..8 {
        same &= rollout_fingerprint(&rollout(inst.clone(), &RandomPolicy, seed).unwrap())
            == rollout_fingerprint(&rollout(inst.clone(), &RandomPolicy, seed).unwrap());
        same &= rollout_fingerprint(&rollout(inst.clone(), &GreedyPolicy, seed).unwrap())
            == rollout_fingerprint(&rollout(inst.clone(), &GreedyPolicy, seed).unwrap());
        same &= rollout_fingerprint(&rollout(inst.clone(), &neural, seed).unwrap())
            == rollout_fingerprint(&rollout(inst.clone(), &neural, seed).unwrap());
    }
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        episodes_per_batch: 4,
        minibatch_size: 16,
        epochs_per_batch: 2,
        total_batches: 3,
        checkpoint_every: 3,
        seed: 21,
        instances: InstanceSource { env: EnvKind::Cities, n: 8, pool_size: 6, eval_pool_size: 4, ..InstanceSource::default() },
        ..TrainConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = train(&cfg, a.path(), None).unwrap().model;
    let mb = train(&cfg, b.path(), None).unwrap().model;
    for file in ["metrics.csv", "episodes.jsonl"] {
        same &= fs::read(a.path().join(file)).unwrap() == fs::read(b.path().join(file)).unwrap();
    }
    same &= ma == mb;
    outcome(same, "instances, random/greedy/neural trajectories and training logs repeat bit for bit".into())
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, start: Instant, o: Outcome| {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name} ({:.2}s): {}", start.elapsed().as_secs_f64(), o.detail);
        if !o.passed {
            failures += 1;
        }
    };
    let checks: [(u32, &str, fn() -> Outcome); 7] = [
        (1, "four-site walkthrough", figure1),
        (2, "exact DP equals brute force", dp_vs_brute_force),
        (3, "return identity", return_identity),
        (4, "savings identity", savings_identity),
        (5, "gradient fidelity", gradient_fidelity),
        (6, "permutation equivariance", equivariance),
        (7, "exact solver scale", exact_scale),
    ];
    for (id, name, run) in checks {
        let start = Instant::now();
        report(id, name, start, run());
    }
    let start = Instant::now();
    let (training, ordering) = training_and_baselines();
    report(8, "training effectiveness", start, training);
    report(9, "baseline ordering", start, ordering);
    let start = Instant::now();
    report(10, "determinism", start, determinism());

    if failures == 0 {
        println!("all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
