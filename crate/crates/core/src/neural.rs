//! Edge-featured graph attention actor and dense critic.
//!
//! The actor sees the graph of edges that are either available or already in
//! the solution. Every undirected edge enters as two directed copies and every
//! node gets a self-loop with zero edge features. Each directed edge carries
//! `[d / D, in_solution, available]`; each node carries the constant 1.
//!
//! One attention layer, for a directed edge `j -> i`:
//!
//! ```text
//! g_ij  = leaky_relu_0.2(W_cat [h_i || e_ij || h_j] + b_cat)
//! s_ij  = a . g_ij
//! alpha = softmax of s over the in-edges of i (self-loop included)
//! h'_i  = elu(sum_j alpha_ij (W_node h_j + b_node))
//! e'_ij = g_ij
//! ```
//!
//! Three layers follow the input embeddings. An available edge is scored by a
//! linear readout of the mean of its two directed final edge embeddings, and
//! the scores are soft-maxed over available edges only.
//!
//! The critic flattens the normalized distance matrix and the availability
//! matrix into one row of length `2 n^2` and maps it through two rectified
//! hidden layers to a scalar.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::env::{EdgeStatus, EnvState};
use crate::error::{io_err, Edge, Error, Result};
use crate::optim::AdamState;
use crate::policy::{Policy, PolicyDecision, PolicyRng};

pub const ATTENTION_LAYERS: usize = 3;
pub const CRITIC_HIDDEN: usize = 128;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Graph view of an environment state consumed by the actor.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphObservation {
    pub n: usize,
    pub node_features: Tensor,
    /// Directed edges as `(source, target)`; self-loops come last.
    pub edge_list: Vec<(usize, usize)>,
    pub edge_features: Tensor,
    /// Available undirected edges in legal-action order.
    pub actions: Vec<Edge>,
    /// Positions of both directed copies of each action in `edge_list`.
    pub action_positions: Vec<(usize, usize)>,
}

impl GraphObservation {
    pub fn sources(&self) -> Vec<usize> {
        self.edge_list.iter().map(|e| e.0).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.edge_list.iter().map(|e| e.1).collect()
    }
}

pub fn encode_observation(state: &EnvState) -> GraphObservation {
    let n = state.n();
    let inst = state.instance();
    let scale = 1.0 / inst.threshold();
    let mut edge_list = Vec::new();
    let mut feats = Vec::new();
    let mut actions = Vec::new();
    let mut action_positions = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (in_solution, available) = match state.status(i, j) {
                EdgeStatus::Absent => continue,
                EdgeStatus::Solution => (1.0, 0.0),
                EdgeStatus::Available => (0.0, 1.0),
            };
            let d = inst.d(i, j) * scale;
            if available == 1.0 {
                actions.push((i, j));
                action_positions.push((edge_list.len(), edge_list.len() + 1));
            }
            edge_list.push((i, j));
            edge_list.push((j, i));
            feats.extend_from_slice(&[d, in_solution, available, d, in_solution, available]);
        }
    }
    for i in 0..n {
        edge_list.push((i, i));
        feats.extend_from_slice(&[0.0, 0.0, 0.0]);
    }
    let m = edge_list.len();
    GraphObservation {
        n,
        node_features: Tensor::filled(n, 1, 1.0),
        edge_list,
        edge_features: Tensor::new(m, 3, feats),
        actions,
        action_positions,
    }
}

/// Affine map `x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for both weight and bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-bound..bound)).collect::<Vec<_>>();
        let weight = Tensor::new(fan_in, fan_out, draw(fan_in * fan_out));
        let bias = Tensor::new(1, fan_out, draw(fan_out));
        Self { weight, bias }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_cat: Linear,
    pub attn: Tensor,
    pub w_node: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub embedding_size: usize,
    pub node_embed: Linear,
    pub edge_embed: Linear,
    pub layers: Vec<AttentionParams>,
    pub readout: Linear,
}

impl PolicyParams {
    pub fn init(embedding_size: usize, rng: &mut impl Rng) -> Self {
        let f = embedding_size;
        let node_embed = Linear::init(1, f, rng);
        let edge_embed = Linear::init(3, f, rng);
        let layers = (0..ATTENTION_LAYERS)
            .map(|_| {
                let w_cat = Linear::init(3 * f, f, rng);
                let bound = 1.0 / (f as f64).sqrt();
                let attn = Tensor::new(f, 1, (0..f).map(|_| rng.random_range(-bound..bound)).collect());
                let w_node = Linear::init(f, f, rng);
                AttentionParams { w_cat, attn, w_node }
            })
            .collect();
        let readout = Linear::init(f, 1, rng);
        Self {
            embedding_size,
            node_embed,
            edge_embed,
            layers,
            readout,
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("node_embed.weight".to_string(), &self.node_embed.weight),
            ("node_embed.bias".to_string(), &self.node_embed.bias),
            ("edge_embed.weight".to_string(), &self.edge_embed.weight),
            ("edge_embed.bias".to_string(), &self.edge_embed.bias),
        ];
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{k}.w_cat.weight"), &l.w_cat.weight));
            out.push((format!("layers.{k}.w_cat.bias"), &l.w_cat.bias));
            out.push((format!("layers.{k}.attn"), &l.attn));
            out.push((format!("layers.{k}.w_node.weight"), &l.w_node.weight));
            out.push((format!("layers.{k}.w_node.bias"), &l.w_node.bias));
        }
        out.push(("readout.weight".to_string(), &self.readout.weight));
        out.push(("readout.bias".to_string(), &self.readout.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.node_embed.weight,
            &mut self.node_embed.bias,
            &mut self.edge_embed.weight,
            &mut self.edge_embed.bias,
        ];
        for l in &mut self.layers {
            out.push(&mut l.w_cat.weight);
            out.push(&mut l.w_cat.bias);
            out.push(&mut l.attn);
            out.push(&mut l.w_node.weight);
            out.push(&mut l.w_node.bias);
        }
        out.push(&mut self.readout.weight);
        out.push(&mut self.readout.bias);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticParams {
    pub n: usize,
    pub layers: Vec<Linear>,
}

impl CriticParams {
    pub fn init(n: usize, rng: &mut impl Rng) -> Self {
        let input = 2 * n * n;
        Self {
            n,
            layers: vec![
                Linear::init(input, CRITIC_HIDDEN, rng),
                Linear::init(CRITIC_HIDDEN, CRITIC_HIDDEN, rng),
                Linear::init(CRITIC_HIDDEN, 1, rng),
            ],
        }
    }

    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("critic.{k}.weight"), &l.weight));
            out.push((format!("critic.{k}.bias"), &l.bias));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

/// Actor and critic together; the unit of training and checkpointing.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic {
    pub actor: PolicyParams,
    pub critic: CriticParams,
}

impl ActorCritic {
    pub fn init(embedding_size: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = PolicyParams::init(embedding_size, &mut rng);
        let critic = CriticParams::init(n, &mut rng);
        Self { actor, critic }
    }

    /// Every parameter with its stable name, actor first.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.actor.named();
        out.extend(self.critic.named());
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.actor.tensors_mut();
        out.extend(self.critic.tensors_mut());
        out
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Binds every tensor as a differentiable leaf, in `named_tensors` order.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> ModelVars {
        let flat: Vec<Var> = self.tensors().into_iter().map(|t| tape.param(t)).collect();
        ModelVars::from_flat(flat, self.actor.layers.len(), self.critic.layers.len())
    }

    /// Binds every tensor as a constant leaf, for gradient-free passes.
    pub fn bind_frozen<'a>(&'a self, tape: &mut Tape<'a>) -> ModelVars {
        let flat: Vec<Var> = self.tensors().into_iter().map(|t| tape.constant_ref(t)).collect();
        ModelVars::from_flat(flat, self.actor.layers.len(), self.critic.layers.len())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_cat: LinearVars,
    pub attn: Var,
    pub w_node: LinearVars,
}

#[derive(Clone, Debug)]
pub struct ActorVars {
    pub node_embed: LinearVars,
    pub edge_embed: LinearVars,
    pub layers: Vec<AttentionVars>,
    pub readout: LinearVars,
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub actor: ActorVars,
    pub critic: Vec<LinearVars>,
    /// All leaves in `named_tensors` order.
    pub flat: Vec<Var>,
}

impl ModelVars {
    fn from_flat(flat: Vec<Var>, attention_layers: usize, critic_layers: usize) -> Self {
        let mut it = flat.iter().copied();
        let mut next = || it.next().expect("parameter count matches layout");
        let linear = |next: &mut dyn FnMut() -> Var| LinearVars {
            weight: next(),
            bias: next(),
        };
        let node_embed = linear(&mut next);
        let edge_embed = linear(&mut next);
        let layers = (0..attention_layers)
            .map(|_| {
                let w_cat = linear(&mut next);
                let attn = next();
                let w_node = linear(&mut next);
                AttentionVars { w_cat, attn, w_node }
            })
            .collect();
        let readout = linear(&mut next);
        let critic = (0..critic_layers).map(|_| linear(&mut next)).collect();
        Self {
            actor: ActorVars {
                node_embed,
                edge_embed,
                layers,
                readout,
            },
            critic,
            flat,
        }
    }
}

/// One attention layer on the tape. Returns updated node and edge embeddings.
pub fn attention_layer(tape: &mut Tape<'_>, h: Var, e: Var, obs: &GraphObservation, p: &AttentionVars) -> (Var, Var) {
    let (src, dst) = (obs.sources(), obs.targets());
    let h_dst = tape.gather_rows(h, dst.clone());
    let h_src = tape.gather_rows(h, src.clone());
    let cat = tape.concat_cols(&[h_dst, e, h_src]);
    let pre = tape.linear(cat, p.w_cat.weight, p.w_cat.bias);
    let g = tape.leaky_relu(pre, LEAKY_SLOPE);
    let logits = tape.matmul(g, p.attn);
    let alpha = tape.segment_softmax(logits, dst.clone());
    let messages = tape.linear(h, p.w_node.weight, p.w_node.bias);
    let messages = tape.gather_rows(messages, src);
    let weighted = tape.scale_rows(messages, alpha);
    let summed = tape.scatter_add_rows(weighted, dst, obs.n);
    let h_next = tape.elu(summed);
    (h_next, g)
}

/// Attention weights of the first layer applied to the raw input embeddings; used by tests.
pub fn first_layer_attention(params: &ActorCritic, obs: &GraphObservation) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = params.bind_frozen(&mut tape);
    let (h, e) = embed_inputs(&mut tape, &vars.actor, obs);
    let l = &vars.actor.layers[0];
    let h_dst = tape.gather_rows(h, obs.targets());
    let h_src = tape.gather_rows(h, obs.sources());
    let cat = tape.concat_cols(&[h_dst, e, h_src]);
    let pre = tape.linear(cat, l.w_cat.weight, l.w_cat.bias);
    let g = tape.leaky_relu(pre, LEAKY_SLOPE);
    let logits = tape.matmul(g, l.attn);
    let alpha = tape.segment_softmax(logits, obs.targets());
    tape.value(alpha).data.clone()
}

fn embed_inputs(tape: &mut Tape<'_>, vars: &ActorVars, obs: &GraphObservation) -> (Var, Var) {
    let x = tape.constant(obs.node_features.clone());
    let ef = tape.constant(obs.edge_features.clone());
    let h = tape.linear(x, vars.node_embed.weight, vars.node_embed.bias);
    let e = tape.linear(ef, vars.edge_embed.weight, vars.edge_embed.bias);
    (h, e)
}

/// Final node and edge embeddings after all attention layers.
pub fn actor_embeddings(tape: &mut Tape<'_>, vars: &ActorVars, obs: &GraphObservation) -> (Var, Var) {
    let (mut h, mut e) = embed_inputs(tape, vars, obs);
    for layer in &vars.layers {
        (h, e) = attention_layer(tape, h, e, obs, layer);
    }
    (h, e)
}

/// Column of unnormalized scores, one per available edge.
pub fn actor_scores(tape: &mut Tape<'_>, vars: &ActorVars, obs: &GraphObservation) -> Result<Var> {
    if obs.actions.is_empty() {
        return Err(Error::NoAction);
    }
    let (_, e) = actor_embeddings(tape, vars, obs);
    let forward = tape.gather_rows(e, obs.action_positions.iter().map(|p| p.0).collect());
    let backward = tape.gather_rows(e, obs.action_positions.iter().map(|p| p.1).collect());
    let both = tape.add(forward, backward);
    let mean = tape.scale(both, 0.5);
    Ok(tape.linear(mean, vars.readout.weight, vars.readout.bias))
}

/// Log-probabilities over available edges.
pub fn actor_log_probs(tape: &mut Tape<'_>, vars: &ActorVars, obs: &GraphObservation) -> Result<Var> {
    let scores = actor_scores(tape, vars, obs)?;
    Ok(tape.log_softmax(scores))
}

/// Action distribution aligned with `obs.actions`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub actions: Vec<Edge>,
    pub log_probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|lp| lp.exp()).collect()
    }

    pub fn entropy(&self) -> f64 {
        -self.log_probs.iter().map(|lp| lp.exp() * lp).sum::<f64>()
    }

    /// Index of the most probable action; ties go to the first.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, lp) in self.log_probs.iter().enumerate() {
            if *lp > self.log_probs[best] {
                best = k;
            }
        }
        best
    }
}

pub fn actor_forward(obs: &GraphObservation, params: &ActorCritic) -> Result<ActionDistribution> {
    let mut tape = Tape::new();
    let vars = params.bind_frozen(&mut tape);
    let lp = actor_log_probs(&mut tape, &vars.actor, obs)?;
    Ok(ActionDistribution {
        actions: obs.actions.clone(),
        log_probs: tape.value(lp).data.clone(),
    })
}

/// Critic input row: normalized distances then availability flags, both row-major `n x n`.
pub fn critic_input(state: &EnvState) -> Tensor {
    let n = state.n();
    let inst = state.instance();
    let scale = 1.0 / inst.threshold();
    let mut data = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            data.push(inst.d(i, j) * scale);
        }
    }
    for i in 0..n {
        for j in 0..n {
            data.push(if i != j && state.status(i, j) == EdgeStatus::Available { 1.0 } else { 0.0 });
        }
    }
    Tensor::row(data)
}

pub fn critic_value(tape: &mut Tape<'_>, vars: &[LinearVars], input: Var) -> Var {
    let mut x = input;
    for (k, l) in vars.iter().enumerate() {
        x = tape.linear(x, l.weight, l.bias);
        if k + 1 < vars.len() {
            x = tape.relu(x);
        }
    }
    x
}

pub fn critic_forward(state: &EnvState, params: &ActorCritic) -> Result<f64> {
    if state.n() != params.critic.n {
        return Err(Error::Dimension {
            expected: params.critic.n,
            actual: state.n(),
        });
    }
    let mut tape = Tape::new();
    let vars = params.bind_frozen(&mut tape);
    let input = tape.constant(critic_input(state));
    let v = critic_value(&mut tape, &vars.critic, input);
    Ok(tape.value(v).item())
}

/// How the neural policy turns a distribution into an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoding {
    Sample,
    Greedy,
}

/// Trained actor-critic wrapped as a [`Policy`].
pub struct NeuralPolicy<'a> {
    pub params: &'a ActorCritic,
    pub decoding: Decoding,
}

impl<'a> NeuralPolicy<'a> {
    pub fn new(params: &'a ActorCritic, decoding: Decoding) -> Self {
        Self { params, decoding }
    }
}

impl Policy for NeuralPolicy<'_> {
    fn decide(&self, state: &EnvState, rng: &mut PolicyRng) -> Result<PolicyDecision> {
        let dist = actor_forward(&encode_observation(state), self.params)?;
        let probs = dist.probs();
        let index = match self.decoding {
            Decoding::Greedy => dist.argmax(),
            Decoding::Sample => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = probs.len() - 1;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                pick
            }
        };
        Ok(PolicyDecision {
            action: dist.actions[index],
            action_index: index,
            action_log_prob: dist.log_probs[index],
            action_distribution: probs,
        })
    }

    fn value(&self, state: &EnvState) -> Result<Option<f64>> {
        critic_forward(state, self.params).map(Some)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub embedding_size: usize,
    pub n_critic: usize,
    pub layer_count: usize,
    pub format_version: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Self-describing parameter container, optionally carrying optimizer state for resuming.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<NamedArray>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batches_done: Option<usize>,
}

impl Checkpoint {
    pub fn from_model(model: &ActorCritic) -> Self {
        Self {
            header: CheckpointHeader {
                embedding_size: model.actor.embedding_size,
                n_critic: model.critic.n,
                layer_count: model.actor.layers.len(),
                format_version: CHECKPOINT_VERSION,
            },
            params: model
                .named_tensors()
                .into_iter()
                .map(|(name, t)| NamedArray {
                    name,
                    shape: [t.rows, t.cols],
                    data: t.data.clone(),
                })
                .collect(),
            optimizer: None,
            batches_done: None,
        }
    }

    pub fn to_model(&self) -> Result<ActorCritic> {
        let h = &self.header;
        if h.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", h.format_version)));
        }
        if h.layer_count != ATTENTION_LAYERS {
            return Err(Error::Checkpoint(format!("expected {ATTENTION_LAYERS} attention layers, found {}", h.layer_count)));
        }
        let mut model = ActorCritic::init(h.embedding_size, h.n_critic, 0);
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != self.params.len() {
            return Err(Error::Checkpoint(format!("expected {} arrays, found {}", names.len(), self.params.len())));
        }
        for ((name, slot), stored) in names.iter().zip(model.tensors_mut()).zip(&self.params) {
            if &stored.name != name {
                return Err(Error::Checkpoint(format!("expected array '{name}', found '{}'", stored.name)));
            }
            if stored.shape != [slot.rows, slot.cols] || stored.data.len() != slot.len() {
                return Err(Error::Checkpoint(format!(
                    "array '{name}' has shape {:?}, expected [{}, {}]",
                    stored.shape, slot.rows, slot.cols
                )));
            }
            slot.data.copy_from_slice(&stored.data);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}
