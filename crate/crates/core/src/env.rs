//! Episodic edge-selection environment.
//!
//! An episode starts from all-singleton clusters with every near pair
//! available. Selecting an available edge merges the two endpoint clusters,
//! moves every cross pair into the solution (closure), and drops any
//! available edge whose clusters could no longer merge without a pair
//! reaching the threshold (pruning). The episode ends when nothing is left
//! to select.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dsu::DisjointSets;
use crate::error::{edge, Edge, Error, Result};
use crate::instance::Instance;
use crate::objective::{self, Partition};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeStatus {
    /// Far pair, or a near pair that has been pruned.
    Absent,
    Available,
    Solution,
}

#[derive(Clone, Debug)]
pub struct EnvState {
    instance: Arc<Instance>,
    clusters: DisjointSets,
    status: Vec<EdgeStatus>,
    available_count: usize,
    solution_count: usize,
    step_count: usize,
}

/// Result of one transition. `reward` is the raw objective decrease in minutes.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub added_edges: Vec<Edge>,
    pub removed_edges: Vec<Edge>,
    pub terminal: bool,
}

/// One line of the JSON-lines episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub step: usize,
    pub action: [usize; 2],
    pub reward: f64,
    pub added: Vec<[usize; 2]>,
    pub removed: Vec<[usize; 2]>,
    pub objective_after: f64,
}

impl EnvState {
    pub fn reset(instance: Arc<Instance>) -> Self {
        let n = instance.n();
        let mut status = vec![EdgeStatus::Absent; n * n];
        let mut available_count = 0;
        for i in 0..n {
            for j in i + 1..n {
                if instance.is_near(i, j) {
                    status[i * n + j] = EdgeStatus::Available;
                    status[j * n + i] = EdgeStatus::Available;
                    available_count += 1;
                }
            }
        }
        Self {
            clusters: DisjointSets::new(n),
            instance,
            status,
            available_count,
            solution_count: 0,
            step_count: 0,
        }
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    pub fn shared_instance(&self) -> &Arc<Instance> {
        &self.instance
    }

    pub fn n(&self) -> usize {
        self.instance.n()
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_terminal(&self) -> bool {
        self.available_count == 0
    }

    pub fn available_count(&self) -> usize {
        self.available_count
    }

    #[inline]
    pub fn status(&self, i: usize, j: usize) -> EdgeStatus {
        self.status[i * self.n() + j]
    }

    fn set_status(&mut self, i: usize, j: usize, s: EdgeStatus) {
        let n = self.n();
        self.status[i * n + j] = s;
        self.status[j * n + i] = s;
    }

    pub fn is_available(&self, e: Edge) -> bool {
        e.0 != e.1 && e.0 < self.n() && e.1 < self.n() && self.status(e.0, e.1) == EdgeStatus::Available
    }

    /// Available edges in lexicographic order.
    pub fn legal_actions(&self) -> Vec<Edge> {
        self.edges_with(EdgeStatus::Available)
    }

    /// Same-cluster pairs in lexicographic order.
    pub fn solution_edges(&self) -> Vec<Edge> {
        self.edges_with(EdgeStatus::Solution)
    }

    fn edges_with(&self, wanted: EdgeStatus) -> Vec<Edge> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.status(i, j) == wanted {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn cluster_of(&self, node: usize) -> usize {
        self.clusters.find(node)
    }

    pub fn cluster_members(&self, node: usize) -> &[usize] {
        self.clusters.members(node)
    }

    pub fn current_partition(&self) -> Partition {
        Partition::new((0..self.n()).map(|i| self.clusters.find(i)).collect()).canonical()
    }

    pub fn objective(&self) -> f64 {
        objective::evaluate(&self.instance, &self.current_partition())
            .expect("environment partitions are feasible by construction")
    }

    /// Objective decrease obtained by merging the clusters of `e`'s endpoints.
    pub fn merge_savings(&self, e: Edge) -> f64 {
        let d_max = self.instance.threshold();
        let mut total = 0.0;
        for &u in self.clusters.members(e.0) {
            for &v in self.clusters.members(e.1) {
                total += d_max - self.instance.d(u, v);
            }
        }
        total
    }

    fn max_cross_distance(&self, a: &[usize], b: &[usize]) -> f64 {
        let mut worst = 0.0_f64;
        for &u in a {
            for &v in b {
                worst = worst.max(self.instance.d(u, v));
            }
        }
        worst
    }

    /// Applies `chosen`. The state is untouched when the edge is not available.
    pub fn step(&mut self, chosen: Edge) -> Result<StepOutcome> {
        let chosen = edge(chosen.0, chosen.1);
        if !self.is_available(chosen) {
            return Err(Error::IllegalAction(chosen));
        }
        let d_max = self.instance.threshold();
        let side_a = self.clusters.members(chosen.0).to_vec();
        let side_b = self.clusters.members(chosen.1).to_vec();

        let mut added_edges = Vec::with_capacity(side_a.len() * side_b.len());
        let mut reward = 0.0;
        for &u in &side_a {
            for &v in &side_b {
                debug_assert_eq!(self.status(u, v), EdgeStatus::Available);
                self.set_status(u, v, EdgeStatus::Solution);
                added_edges.push(edge(u, v));
                reward += d_max - self.instance.d(u, v);
            }
        }
        added_edges.sort_unstable();
        self.available_count -= added_edges.len();
        self.solution_count += added_edges.len();

        let root = self.clusters.union(chosen.0, chosen.1);
        let merged = self.clusters.members(root).to_vec();

        // Neighbouring clusters that were mergeable with either side.
        let n = self.n();
        let mut candidates: Vec<usize> = Vec::new();
        for w in 0..n {
            if self.clusters.find(w) == root {
                continue;
            }
            if merged.iter().any(|&x| self.status(w, x) == EdgeStatus::Available) {
                let r = self.clusters.find(w);
                if !candidates.contains(&r) {
                    candidates.push(r);
                }
            }
        }

        let mut removed_edges = Vec::new();
        for c in candidates {
            let other = self.clusters.members(c).to_vec();
            if self.max_cross_distance(&other, &merged) < d_max {
                continue;
            }
            for &u in &other {
                for &v in &merged {
                    if self.status(u, v) == EdgeStatus::Available {
                        self.set_status(u, v, EdgeStatus::Absent);
                        removed_edges.push(edge(u, v));
                    }
                }
            }
        }
        removed_edges.sort_unstable();
        self.available_count -= removed_edges.len();
        self.step_count += 1;

        Ok(StepOutcome {
            reward,
            added_edges,
            removed_edges,
            terminal: self.is_terminal(),
        })
    }

    /// Full O(n^2 * cluster size) check of every state invariant.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.n();
        let d_max = self.instance.threshold();
        let (mut avail, mut sol) = (0, 0);
        for i in 0..n {
            for j in i + 1..n {
                let s = self.status(i, j);
                if s != self.status(j, i) {
                    return Err(format!("status of ({i},{j}) not symmetric"));
                }
                let same = self.clusters.find(i) == self.clusters.find(j);
                match s {
                    EdgeStatus::Solution => {
                        sol += 1;
                        if !same {
                            return Err(format!("solution edge ({i},{j}) spans clusters"));
                        }
                        if !self.instance.is_near(i, j) {
                            return Err(format!("solution edge ({i},{j}) is far"));
                        }
                    }
                    EdgeStatus::Available | EdgeStatus::Absent => {
                        if same {
                            return Err(format!("same-cluster pair ({i},{j}) not in solution"));
                        }
                        let mergeable = self.max_cross_distance(self.clusters.members(i), self.clusters.members(j)) < d_max;
                        if mergeable != (s == EdgeStatus::Available) {
                            return Err(format!("availability of ({i},{j}) is {s:?} but mergeable = {mergeable}"));
                        }
                        if s == EdgeStatus::Available {
                            avail += 1;
                        }
                    }
                }
            }
        }
        if avail != self.available_count || sol != self.solution_count {
            return Err("edge counters out of sync".into());
        }
        if self.step_count + 1 > n.max(1) {
            return Err(format!("step count {} exceeds n - 1", self.step_count));
        }
        Ok(())
    }
}

/// Replays `actions` from the reset state of `instance`.
pub fn replay(instance: Arc<Instance>, actions: &[Edge]) -> Result<(EnvState, Vec<StepOutcome>)> {
    let mut state = EnvState::reset(instance);
    let mut outcomes = Vec::with_capacity(actions.len());
    for (position, &a) in actions.iter().enumerate() {
        match state.step(a) {
            Ok(out) => outcomes.push(out),
            Err(Error::IllegalAction(edge)) => return Err(Error::Replay { position, edge }),
            Err(e) => return Err(e),
        }
    }
    Ok((state, outcomes))
}

impl EpisodeRecord {
    pub fn new(step: usize, action: Edge, outcome: &StepOutcome, objective_after: f64) -> Self {
        let pair = |e: &Edge| [e.0, e.1];
        Self {
            step,
            action: pair(&action),
            reward: outcome.reward,
            added: outcome.added_edges.iter().map(pair).collect(),
            removed: outcome.removed_edges.iter().map(pair).collect(),
            objective_after,
        }
    }
}
