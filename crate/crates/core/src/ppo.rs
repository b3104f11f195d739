//! Proximal Policy Optimization for the edge-selection agent.
//!
//! Each batch collects `episodes_per_batch` sampled episodes with the current
//! parameters, computes GAE advantages (terminal value 0), normalizes them
//! over the batch, and runs `epochs_per_batch` passes of clipped-surrogate
//! updates over shuffled minibatches with Adam.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{io_err, Error, Result};
use crate::exact::{self, DEFAULT_EXACT_CAP};
use crate::instance::{EnvKind, Instance, InstanceSpec, DEFAULT_THRESHOLD};
use crate::neural::{self, ActorCritic, Checkpoint, Decoding, GraphObservation, ModelVars, NeuralPolicy};
use crate::objective;
use crate::optim::{clip_global_norm, AdamConfig, AdamState};
use crate::policy::{rollout, Trajectory};

/// Where training episodes come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceSource {
    pub env: EnvKind,
    pub n: usize,
    pub threshold: f64,
    /// Fixed training pool size; ignored when `fresh` is set.
    pub pool_size: usize,
    pub seed_base: u64,
    /// Draw a new instance for every episode instead of sampling the pool.
    pub fresh: bool,
    pub eval_pool_size: usize,
    pub eval_seed_base: u64,
}

impl Default for InstanceSource {
    fn default() -> Self {
        Self {
            env: EnvKind::Cities,
            n: 18,
            threshold: DEFAULT_THRESHOLD,
            pool_size: 128,
            seed_base: 0,
            fresh: false,
            eval_pool_size: 128,
            eval_seed_base: 1_000_000,
        }
    }
}

impl InstanceSource {
    pub fn train_spec(&self) -> InstanceSpec {
        InstanceSpec {
            env: self.env,
            n: self.n,
            threshold: self.threshold,
            seed_base: self.seed_base,
        }
    }

    pub fn eval_spec(&self) -> InstanceSpec {
        InstanceSpec {
            seed_base: self.eval_seed_base,
            ..self.train_spec()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub epochs_per_batch: usize,
    pub episodes_per_batch: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub grad_clip_norm: f64,
    pub total_batches: usize,
    pub checkpoint_every: usize,
    pub embedding_size: usize,
    pub seed: u64,
    pub instances: InstanceSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            gamma: 1.0,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            epochs_per_batch: 4,
            episodes_per_batch: 32,
            minibatch_size: 256,
            entropy_coef: 0.01,
            value_coef: 0.5,
            grad_clip_norm: 0.5,
            total_batches: 600,
            checkpoint_every: 100,
            embedding_size: 8,
            seed: 0,
            instances: InstanceSource::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gae_lambda must be in (0, 1]");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must be in (0, 1)");
        }
        if self.epochs_per_batch == 0 || self.episodes_per_batch == 0 || self.minibatch_size == 0 {
            return bad("epochs, episodes and minibatch size must be positive");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef > 0.0 && self.grad_clip_norm > 0.0) {
            return bad("loss coefficients and clip norm must be positive");
        }
        if self.embedding_size == 0 || self.checkpoint_every == 0 {
            return bad("embedding_size and checkpoint_every must be positive");
        }
        let src = &self.instances;
        if src.n < 2 || !(src.threshold > 0.0) {
            return bad("instances need n >= 2 and a positive threshold");
        }
        if !src.fresh && src.pool_size == 0 {
            return bad("pool_size must be positive unless fresh instances are used");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.learning_rate)
    }
}

/// Generalized advantage estimates and returns for one episode.
///
/// `values[t]` estimates the state before step `t`; the state after the last
/// step is terminal and valued 0.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::Dimension {
            expected: rewards.len(),
            actual: values.len(),
        });
    }
    let len = rewards.len();
    let mut advantages = vec![0.0; len];
    let mut running = 0.0;
    for t in (0..len).rev() {
        let next_value = if t + 1 < len { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

pub fn trajectory_gae(traj: &Trajectory, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
    let values: Vec<f64> = traj.steps.iter().filter_map(|s| s.value).collect();
    compute_gae(&rewards, &values, gamma, lambda)
}

/// One transition prepared for the update phase.
#[derive(Clone, Debug)]
pub struct Sample {
    pub obs: GraphObservation,
    pub critic_input: Tensor,
    pub action_index: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Flattens trajectories into samples with batch-normalized advantages.
pub fn build_samples(batch: &[Trajectory], cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for traj in batch {
        let (adv, ret) = trajectory_gae(traj, cfg.gamma, cfg.gae_lambda)?;
        for ((step, a), r) in traj.steps.iter().zip(adv).zip(ret) {
            samples.push(Sample {
                obs: neural::encode_observation(&step.state),
                critic_input: neural::critic_input(&step.state),
                action_index: step.action_index,
                old_log_prob: step.log_prob,
                advantage: a,
                ret: r,
            });
        }
    }
    normalize_advantages(&mut samples);
    Ok(samples)
}

/// Shifts and scales advantages to mean 0 and unit (population) standard deviation.
pub fn normalize_advantages(samples: &mut [Sample]) {
    if samples.is_empty() {
        return;
    }
    let k = samples.len() as f64;
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / k;
    let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / k;
    let std = var.sqrt();
    for s in samples {
        s.advantage = (s.advantage - mean) / (std + 1e-8);
    }
}

/// Loss components of one sample or averaged over a minibatch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

impl LossStats {
    fn add(&mut self, o: &LossStats) {
        self.policy += o.policy;
        self.value += o.value;
        self.entropy += o.entropy;
        self.total += o.total;
    }

    fn scaled(self, s: f64) -> Self {
        Self {
            policy: self.policy * s,
            value: self.value * s,
            entropy: self.entropy * s,
            total: self.total * s,
        }
    }
}

/// Records the unweighted per-sample loss on `tape`; returns the scalar loss node.
pub fn sample_loss<'a>(
    tape: &mut Tape<'a>,
    vars: &ModelVars,
    sample: &'a Sample,
    cfg: &TrainConfig,
) -> Result<(crate::autodiff::Var, LossStats)> {
    let log_probs = neural::actor_log_probs(tape, &vars.actor, &sample.obs)?;
    let chosen = tape.pick(log_probs, sample.action_index);
    let old = tape.constant(Tensor::scalar(sample.old_log_prob));
    let log_ratio = tape.sub(chosen, old);
    let ratio = tape.exp(log_ratio);
    let adv = tape.constant(Tensor::scalar(sample.advantage));
    let unclipped = tape.mul(ratio, adv);
    let clipped_ratio = tape.clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    let clipped = tape.mul(clipped_ratio, adv);
    let surrogate = tape.min(unclipped, clipped);
    let policy = tape.scale(surrogate, -1.0);

    let probs = tape.exp(log_probs);
    let plogp = tape.mul(probs, log_probs);
    let neg_entropy = tape.sum(plogp);

    let input = tape.constant_ref(&sample.critic_input);
    let value = neural::critic_value(tape, &vars.critic, input);
    let target = tape.constant(Tensor::scalar(sample.ret));
    let err = tape.sub(value, target);
    let value_loss = tape.square(err);

    let weighted_value = tape.scale(value_loss, cfg.value_coef);
    let weighted_entropy = tape.scale(neg_entropy, cfg.entropy_coef);
    let partial = tape.add(policy, weighted_value);
    let total = tape.add(partial, weighted_entropy);

    let stats = LossStats {
        policy: tape.value(policy).item(),
        value: tape.value(value_loss).item(),
        entropy: -tape.value(neg_entropy).item(),
        total: tape.value(total).item(),
    };
    Ok((total, stats))
}

/// Per-sample loss and its gradient with respect to every parameter.
pub fn sample_loss_and_grad(model: &ActorCritic, sample: &Sample, cfg: &TrainConfig) -> Result<(LossStats, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let (loss, stats) = sample_loss(&mut tape, &vars, sample, cfg)?;
    let mut grads = tape.backward(loss);
    let out = vars
        .flat
        .iter()
        .zip(model.tensors())
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.rows, t.cols)))
        .collect();
    Ok((stats, out))
}

/// Per-sample loss value only, used by finite-difference checks.
pub fn sample_loss_value(model: &ActorCritic, sample: &Sample, cfg: &TrainConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.bind_frozen(&mut tape);
    let (_, stats) = sample_loss(&mut tape, &vars, sample, cfg)?;
    Ok(stats.total)
}

const GRAD_CHUNK: usize = 8;

/// Mean loss and gradient over a minibatch. Chunked so the summation order
/// does not depend on the thread count.
pub fn minibatch_loss_and_grad(model: &ActorCritic, samples: &[&Sample], cfg: &TrainConfig) -> Result<(LossStats, Vec<Tensor>)> {
    let partials: Vec<Result<(LossStats, Vec<Tensor>)>> = samples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut stats = LossStats::default();
            let mut acc = model.zeros_like();
            for s in chunk {
                let (st, g) = sample_loss_and_grad(model, s, cfg)?;
                stats.add(&st);
                for (a, b) in acc.iter_mut().zip(&g) {
                    for (x, y) in a.data.iter_mut().zip(&b.data) {
                        *x += y;
                    }
                }
            }
            Ok((stats, acc))
        })
        .collect();
    let mut stats = LossStats::default();
    let mut grads = model.zeros_like();
    for p in partials {
        let (st, g) = p?;
        stats.add(&st);
        for (a, b) in grads.iter_mut().zip(&g) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }
    let inv = 1.0 / samples.len().max(1) as f64;
    for g in &mut grads {
        for x in &mut g.data {
            *x *= inv;
        }
    }
    Ok((stats.scaled(inv), grads))
}

fn check_gradients(model: &ActorCritic, grads: &[Tensor]) -> Result<()> {
    for ((name, _), g) in model.named_tensors().into_iter().zip(grads) {
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(name));
        }
    }
    Ok(())
}

/// Averages of the loss terms over every minibatch step of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub minibatches: usize,
}

pub fn ppo_update(
    model: &mut ActorCritic,
    optimizer: &mut AdamState,
    samples: &[Sample],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
    batch_id: usize,
) -> Result<UpdateStats> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("ppo_update needs a non-empty batch".into()));
    }
    let adam = cfg.adam();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut totals = LossStats::default();
    let mut minibatches = 0;
    for _ in 0..cfg.epochs_per_batch {
        order.shuffle(rng);
        for (mb, idx) in order.chunks(cfg.minibatch_size).enumerate() {
            let picked: Vec<&Sample> = idx.iter().map(|&k| &samples[k]).collect();
            let (stats, mut grads) = minibatch_loss_and_grad(model, &picked, cfg)?;
            if !stats.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    batch: batch_id,
                    minibatch: mb,
                });
            }
            check_gradients(model, &grads)?;
            clip_global_norm(&mut grads, cfg.grad_clip_norm);
            optimizer.update(&adam, &mut model.tensors_mut(), &grads);
            totals.add(&stats);
            minibatches += 1;
        }
    }
    let inv = 1.0 / minibatches as f64;
    Ok(UpdateStats {
        policy_loss: totals.policy * inv,
        value_loss: totals.value * inv,
        entropy: totals.entropy * inv,
        minibatches,
    })
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub batch: usize,
    pub mean_return: f64,
    pub mean_objective: f64,
    pub mean_gap: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// One line of `episodes.jsonl`: the final partition of a training episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub batch: usize,
    pub episode: usize,
    /// Index into the training pool, or the fresh-instance seed offset.
    pub instance: u64,
    pub assignment: Vec<usize>,
    pub objective: f64,
    pub reference: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ActorCritic,
    pub metrics: Vec<MetricsRow>,
    pub checkpoints: Vec<PathBuf>,
}

/// Deterministic 64-bit mixing of a seed with a stream id.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Exact optimum per instance when the size allows it.
pub fn exact_references(instances: &[Arc<Instance>]) -> Result<Vec<Option<f64>>> {
    instances
        .par_iter()
        .map(|inst| {
            if inst.n() <= DEFAULT_EXACT_CAP {
                Ok(Some(exact::solve_exact_dp(inst)?.objective))
            } else {
                Ok(None)
            }
        })
        .collect()
}

struct Pool {
    instances: Vec<Arc<Instance>>,
    references: Vec<Option<f64>>,
}

fn build_pool(cfg: &TrainConfig) -> Result<Option<Pool>> {
    if cfg.instances.fresh {
        return Ok(None);
    }
    let instances: Vec<Arc<Instance>> = cfg
        .instances
        .train_spec()
        .generate_many(cfg.instances.pool_size)?
        .into_iter()
        .map(Arc::new)
        .collect();
    let references = exact_references(&instances)?;
    Ok(Some(Pool { instances, references }))
}

fn checkpoint_path(dir: &Path, batch: usize) -> PathBuf {
    dir.join(format!("checkpoint_{batch:06}.json"))
}

fn write_checkpoint(dir: &Path, model: &ActorCritic, adam: &AdamState, batches_done: usize) -> Result<PathBuf> {
    let mut ck = Checkpoint::from_model(model);
    ck.optimizer = Some(adam.clone());
    ck.batches_done = Some(batches_done);
    let path = checkpoint_path(dir, batches_done);
    ck.save(&path)?;
    ck.save(&dir.join("latest.json"))?;
    Ok(path)
}

/// Keeps only lines of an append-only log whose batch is below `batches_done`.
fn truncate_log<T: for<'de> Deserialize<'de>>(path: &Path, batches_done: usize, batch_of: impl Fn(&T) -> usize, csv_header: bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(io_err(path))?;
    let mut kept = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if csv_header && k == 0 {
            kept.push(line);
            continue;
        }
        let batch = if csv_header {
            line.split(',').next().and_then(|b| b.parse().ok()).unwrap_or(usize::MAX)
        } else {
            serde_json::from_str::<T>(&line).map(|v| batch_of(&v)).unwrap_or(usize::MAX)
        };
        if batch < batches_done {
            kept.push(line);
        }
    }
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Runs PPO training, writing `metrics.csv`, `episodes.jsonl` and checkpoints into `out_dir`.
///
/// With `resume`, training continues from the checkpoint's batch count and
/// optimizer state. Every random stream is derived from `(seed, batch)`, so a
/// resumed run reproduces the metrics of an unbroken one.
pub fn train(cfg: &TrainConfig, out_dir: &Path, resume: Option<&Checkpoint>) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let pool = build_pool(cfg)?;

    let (mut model, mut adam, start) = match resume {
        Some(ck) => {
            let model = ck.to_model()?;
            if model.critic.n != cfg.instances.n || model.actor.embedding_size != cfg.embedding_size {
                return Err(Error::Checkpoint("checkpoint does not match the training config".into()));
            }
            let adam = ck.optimizer.clone().ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
            (model, adam, ck.batches_done.unwrap_or(0))
        }
        None => {
            let model = ActorCritic::init(cfg.embedding_size, cfg.instances.n, derive_seed(cfg.seed, u64::MAX));
            let adam = AdamState::new(&model.tensors());
            (model, adam, 0)
        }
    };

    let metrics_path = out_dir.join("metrics.csv");
    let episodes_path = out_dir.join("episodes.jsonl");
    if start == 0 {
        let _ = fs::remove_file(&metrics_path);
        let _ = fs::remove_file(&episodes_path);
    } else {
        truncate_log::<MetricsRow>(&metrics_path, start, |r| r.batch, true)?;
        truncate_log::<EpisodeSummary>(&episodes_path, start, |e| e.batch, false)?;
    }
    let mut metrics_writer = {
        let fresh = !metrics_path.exists();
        let file = OpenOptions::new().create(true).append(true).open(&metrics_path).map_err(io_err(&metrics_path))?;
        csv::WriterBuilder::new().has_headers(fresh).from_writer(file)
    };
    let mut episodes_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&episodes_path)
        .map_err(io_err(&episodes_path))?;

    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    for batch in start..cfg.total_batches {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, batch as u64));
        let jobs: Vec<(u64, Arc<Instance>, Option<f64>, u64)> = (0..cfg.episodes_per_batch)
            .map(|_| {
                let episode_seed: u64 = rng.random();
                match &pool {
                    Some(p) => {
                        let k = rng.random_range(0..p.instances.len());
                        Ok((k as u64, p.instances[k].clone(), p.references[k], episode_seed))
                    }
                    None => {
                        let offset: u64 = rng.random();
                        let inst = Arc::new(cfg.instances.train_spec().generate(offset)?);
                        let reference = exact_references(std::slice::from_ref(&inst))?[0];
                        Ok((offset, inst, reference, episode_seed))
                    }
                }
            })
            .collect::<Result<_>>()?;

        let policy = NeuralPolicy::new(&model, Decoding::Sample);
        let rollouts: Vec<_> = jobs
            .par_iter()
            .map(|(_, inst, _, seed)| rollout(inst.clone(), &policy, *seed))
            .collect::<Result<_>>()?;

        let mut summaries = Vec::with_capacity(rollouts.len());
        for (episode, (r, (id, _, reference, _))) in rollouts.iter().zip(&jobs).enumerate() {
            let gap = reference.map(|rf| objective::optimality_gap(r.objective, rf)).transpose()?;
            summaries.push(EpisodeSummary {
                batch,
                episode,
                instance: *id,
                assignment: r.final_state.current_partition().assignment,
                objective: r.objective,
                reference: *reference,
                gap,
            });
        }
        let k = rollouts.len() as f64;
        let mean_return = rollouts.iter().map(|r| r.trajectory.total_reward()).sum::<f64>() / k;
        let mean_objective = summaries.iter().map(|s| s.objective).sum::<f64>() / k;
        let mean_gap = mean_of_gaps(&summaries);

        let trajectories: Vec<Trajectory> = rollouts.into_iter().map(|r| r.trajectory).collect();
        let samples = build_samples(&trajectories, cfg)?;
        let stats = if samples.is_empty() {
            UpdateStats::default()
        } else {
            ppo_update(&mut model, &mut adam, &samples, cfg, &mut rng, batch)?
        };

        let row = MetricsRow {
            batch,
            mean_return,
            mean_objective,
            mean_gap,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
        };
        metrics_writer.serialize(&row)?;
        metrics_writer.flush().map_err(io_err(&metrics_path))?;
        for s in &summaries {
            writeln!(episodes_file, "{}", serde_json::to_string(s)?).map_err(io_err(&episodes_path))?;
        }
        metrics.push(row);

        let done = batch + 1;
        if done % cfg.checkpoint_every == 0 || done == cfg.total_batches {
            checkpoints.push(write_checkpoint(out_dir, &model, &adam, done)?);
        }
    }
    Ok(TrainOutcome {
        model,
        metrics,
        checkpoints,
    })
}

/// Mean gap over the summaries, or `None` if any lacks a reference.
pub fn mean_of_gaps(summaries: &[EpisodeSummary]) -> Option<f64> {
    let gaps: Option<Vec<f64>> = summaries.iter().map(|s| s.gap).collect();
    gaps.filter(|g| !g.is_empty()).map(|g| g.iter().sum::<f64>() / g.len() as f64)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeSummary>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines().map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Final objectives of greedy-decoded episodes of `model` on each instance.
pub fn evaluate_model(model: &ActorCritic, instances: &[Arc<Instance>]) -> Result<Vec<f64>> {
    let policy = NeuralPolicy::new(model, Decoding::Greedy);
    instances
        .par_iter()
        .map(|inst| {
            if inst.n() != model.critic.n {
                return Err(Error::Dimension {
                    expected: model.critic.n,
                    actual: inst.n(),
                });
            }
            Ok(rollout(inst.clone(), &policy, 0)?.objective)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::figure1_instance;
    use crate::policy::RandomPolicy;

    #[test]
    fn gae_telescopes_with_unit_lambda() {
        let rewards = [0.5, 1.25, 0.25, 2.0];
        let values = [1.0, -0.5, 0.75, 0.1];
        let (adv, ret) = compute_gae(&rewards, &values, 1.0, 1.0).unwrap();
        for t in 0..4 {
            let tail: f64 = rewards[t..].iter().sum();
            assert!((adv[t] - (tail - values[t])).abs() < 1e-12);
            assert!((ret[t] - tail).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_edge_cases() {
        let (adv, _) = compute_gae(&[0.7], &[0.2], 1.0, 0.95).unwrap();
        assert!((adv[0] - 0.5).abs() < 1e-15);
        let (adv, ret) = compute_gae(&[0.0; 5], &[0.0; 5], 1.0, 0.95).unwrap();
        assert!(adv.iter().chain(&ret).all(|x| *x == 0.0));
        assert!(matches!(compute_gae(&[1.0, 2.0], &[1.0], 1.0, 0.95), Err(Error::Dimension { .. })));
    }

    #[test]
    fn gae_matches_direct_sum() {
        let rewards = [0.3, 0.1, 0.9];
        let values = [0.2, 0.4, 0.6];
        let (gamma, lambda) = (0.9, 0.8);
        let (adv, _) = compute_gae(&rewards, &values, gamma, lambda).unwrap();
        let v = |t: usize| if t < 3 { values[t] } else { 0.0 };
        let delta: Vec<f64> = (0..3).map(|t| rewards[t] + gamma * v(t + 1) - v(t)).collect();
        for t in 0..3 {
            let expect: f64 = (t..3).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum();
            assert!((adv[t] - expect).abs() < 1e-12);
        }
    }

    fn fixture_samples(model: &ActorCritic, cfg: &TrainConfig) -> Vec<Sample> {
        let inst = Arc::new(figure1_instance());
        let policy = NeuralPolicy::new(model, Decoding::Sample);
        let trajs: Vec<Trajectory> = (0..6).map(|s| rollout(inst.clone(), &policy, s).unwrap().trajectory).collect();
        build_samples(&trajs, cfg).unwrap()
    }

    #[test]
    fn ratio_one_policy_loss_is_negative_mean_advantage() {
        let cfg = TrainConfig::default();
        let model = ActorCritic::init(8, 4, 5);
        let samples = fixture_samples(&model, &cfg);
        let picked: Vec<&Sample> = samples.iter().collect();
        let (stats, _) = minibatch_loss_and_grad(&model, &picked, &cfg).unwrap();
        let mean_adv = samples.iter().map(|s| s.advantage).sum::<f64>() / samples.len() as f64;
        assert!((stats.policy + mean_adv).abs() < 1e-12);
        // Normalized advantages have zero mean.
        assert!(mean_adv.abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_gives_zero_actor_gradient_from_policy_term() {
        let cfg = TrainConfig {
            entropy_coef: 0.0,
            ..TrainConfig::default()
        };
        let model = ActorCritic::init(8, 4, 5);
        let mut samples = fixture_samples(&model, &cfg);
        for s in &mut samples {
            s.advantage = 0.0;
        }
        let (_, grads) = sample_loss_and_grad(&model, &samples[0], &cfg).unwrap();
        let actor_count = model.actor.named().len();
        for g in &grads[..actor_count] {
            assert!(g.data.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn clipped_ratio_caps_surrogate() {
        let cfg = TrainConfig::default();
        let model = ActorCritic::init(8, 4, 5);
        let mut s = fixture_samples(&model, &cfg).remove(0);
        let current = neural::actor_forward(&s.obs, &model).unwrap().log_probs[s.action_index];
        s.old_log_prob = current - 2f64.ln();
        s.advantage = 1.5;
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let (_, stats) = sample_loss(&mut tape, &vars, &s, &cfg).unwrap();
        assert!((stats.policy + 1.2 * 1.5).abs() < 1e-12);
    }

    #[test]
    fn update_changes_parameters_and_reports_stats() {
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let mut model = ActorCritic::init(8, 4, 5);
        let before = model.clone();
        let samples = fixture_samples(&model, &cfg);
        let mut adam = AdamState::new(&model.tensors());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stats = ppo_update(&mut model, &mut adam, &samples, &cfg, &mut rng, 0).unwrap();
        assert_eq!(stats.minibatches, cfg.epochs_per_batch);
        assert!(stats.entropy > 0.0);
        assert_ne!(model, before);
        assert!(ppo_update(&mut model, &mut adam, &[], &cfg, &mut rng, 0).is_err());
    }

    #[test]
    fn config_toml_round_trip_and_defaults() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate, 1e-5);
        let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let partial = TrainConfig::from_toml("total_batches = 7\n[instances]\nn = 9\n").unwrap();
        assert_eq!(partial.total_batches, 7);
        assert_eq!(partial.instances.n, 9);
        assert_eq!(partial.instances.pool_size, 128);
        assert!(TrainConfig::from_toml("clip_epsilon = 1.5").is_err());
        assert!(TrainConfig::from_toml("gamma = 0.0").is_err());
    }

    #[test]
    fn random_trajectory_without_values_fails_gae() {
        let inst = Arc::new(figure1_instance());
        let traj = rollout(inst, &RandomPolicy, 0).unwrap().trajectory;
        assert!(trajectory_gae(&traj, 1.0, 0.95).is_err());
    }
}
