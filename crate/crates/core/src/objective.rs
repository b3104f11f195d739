//! Clustering objective, feasibility, the savings reformulation and gap arithmetic.
//!
//! Only near pairs (`d_ij < D`) enter the objective. A near pair contributes
//! `d_ij` when both sites share a cluster and the penalty `D` otherwise. Pairs
//! with `d_ij >= D` must be separated and contribute nothing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Edge, Error, Result};
use crate::instance::Instance;

/// Node-to-cluster assignment. Labels are arbitrary; only equality matters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub assignment: Vec<usize>,
}

impl Partition {
    pub fn new(assignment: Vec<usize>) -> Self {
        Self { assignment }
    }

    pub fn singletons(n: usize) -> Self {
        Self::new((0..n).collect())
    }

    /// Builds a partition of `n` sites from explicit clusters; unlisted sites become singletons.
    pub fn from_clusters(n: usize, clusters: &[Vec<usize>]) -> Self {
        let mut assignment: Vec<usize> = (0..n).map(|i| clusters.len() + i).collect();
        for (label, cluster) in clusters.iter().enumerate() {
            for &i in cluster {
                assignment[i] = label;
            }
        }
        Self::new(assignment).canonical()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn same_cluster(&self, i: usize, j: usize) -> bool {
        self.assignment[i] == self.assignment[j]
    }

    /// Relabels clusters 0, 1, 2, ... in order of first appearance.
    pub fn canonical(&self) -> Self {
        let mut map = BTreeMap::new();
        let assignment = self
            .assignment
            .iter()
            .map(|label| {
                let next = map.len();
                *map.entry(*label).or_insert(next)
            })
            .collect();
        Self { assignment }
    }

    /// Clusters as sorted member lists, ordered by smallest member.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let canon = self.canonical();
        let count = canon.assignment.iter().max().map_or(0, |m| m + 1);
        let mut out = vec![Vec::new(); count];
        for (i, &c) in canon.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// Separation indicator `x_ij`: 0 when `i` and `j` share a cluster, 1 otherwise.
    pub fn separation(&self, i: usize, j: usize) -> u8 {
        u8::from(!self.same_cluster(i, j))
    }
}

fn check_len(inst: &Instance, p: &Partition) -> Result<()> {
    if p.len() != inst.n() {
        return Err(Error::Dimension {
            expected: inst.n(),
            actual: p.len(),
        });
    }
    Ok(())
}

/// All pairs `i < j` with `d_ij < D`, in row-major order.
pub fn near_pairs(inst: &Instance) -> Vec<Edge> {
    let n = inst.n();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if inst.is_near(i, j) {
                out.push((i, j));
            }
        }
    }
    out
}

fn first_violation(inst: &Instance, p: &Partition) -> Option<Edge> {
    let n = inst.n();
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .find(|&(i, j)| p.same_cluster(i, j) && !inst.is_near(i, j))
}

/// True iff every cluster has diameter strictly below the threshold.
pub fn is_feasible(inst: &Instance, p: &Partition) -> Result<bool> {
    check_len(inst, p)?;
    Ok(first_violation(inst, p).is_none())
}

/// Objective value in minutes. Infeasible partitions are rejected, not priced.
pub fn evaluate(inst: &Instance, p: &Partition) -> Result<f64> {
    check_len(inst, p)?;
    if let Some((i, j)) = first_violation(inst, p) {
        return Err(Error::Infeasible(i, j));
    }
    let d_max = inst.threshold();
    let n = inst.n();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if inst.is_near(i, j) {
                total += if p.same_cluster(i, j) { inst.d(i, j) } else { d_max };
            }
        }
    }
    Ok(total)
}

/// Objective decrease from forming `cluster` out of singletons: `sum (D - d_ij)` over its pairs.
pub fn savings(inst: &Instance, cluster: &[usize]) -> Result<f64> {
    let d_max = inst.threshold();
    let mut total = 0.0;
    for (a, &i) in cluster.iter().enumerate() {
        for &j in &cluster[a + 1..] {
            if !inst.is_near(i, j) {
                return Err(Error::Infeasible(i.min(j), i.max(j)));
            }
            total += d_max - inst.d(i, j);
        }
    }
    Ok(total)
}

/// Objective of the all-singletons partition, `D * |near pairs|`.
pub fn singleton_objective(inst: &Instance) -> f64 {
    inst.threshold() * near_pairs(inst).len() as f64
}

/// Relative excess `(candidate - reference) / reference`, snapped to 0 within 1e-9 relative.
pub fn optimality_gap(candidate: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 {
        return if candidate == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::UndefinedGap { candidate, reference })
        };
    }
    if !(reference > 0.0) || !candidate.is_finite() {
        return Err(Error::UndefinedGap { candidate, reference });
    }
    let tol = 1e-9 * reference;
    if (candidate - reference).abs() <= tol {
        return Ok(0.0);
    }
    if candidate < reference {
        return Err(Error::BelowReference { candidate, reference });
    }
    Ok((candidate - reference) / reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::figure1_instance;

    #[test]
    fn figure1_near_pairs() {
        assert_eq!(near_pairs(&figure1_instance()), vec![(0, 1), (0, 2), (1, 2), (2, 3)]);
    }

    #[test]
    fn threshold_distance_is_far() {
        let inst = Instance::new(60.0, vec![vec![0.0, 60.0], vec![60.0, 0.0]]).unwrap();
        assert!(near_pairs(&inst).is_empty());
        assert!(!is_feasible(&inst, &Partition::new(vec![0, 0])).unwrap());
        let far = Instance::new(10.0, vec![vec![0.0, 20.0, 30.0], vec![20.0, 0.0, 11.0], vec![30.0, 11.0, 0.0]]).unwrap();
        assert!(near_pairs(&far).is_empty());
        assert_eq!(evaluate(&far, &Partition::singletons(3)).unwrap(), 0.0);
    }

    #[test]
    fn figure1_objective_values() {
        let inst = figure1_instance();
        let best = Partition::new(vec![0, 0, 0, 1]);
        assert!(is_feasible(&inst, &best).unwrap());
        assert_eq!(evaluate(&inst, &best).unwrap(), 74.0);
        assert_eq!(evaluate(&inst, &Partition::singletons(4)).unwrap(), 240.0);
        assert_eq!(savings(&inst, &[0, 1, 2]).unwrap(), 166.0);
        assert_eq!(savings(&inst, &[3]).unwrap(), 0.0);
        assert_eq!(singleton_objective(&inst) - savings(&inst, &[0, 1, 2]).unwrap(), 74.0);
    }

    #[test]
    fn infeasible_partition_is_refused() {
        let inst = figure1_instance();
        let bad = Partition::new(vec![0, 0, 0, 0]);
        assert!(!is_feasible(&inst, &bad).unwrap());
        assert!(matches!(evaluate(&inst, &bad), Err(Error::Infeasible(0, 3))));
        assert!(matches!(savings(&inst, &[0, 3]), Err(Error::Infeasible(0, 3))));
        assert!(matches!(
            evaluate(&inst, &Partition::singletons(3)),
            Err(Error::Dimension { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn gap_arithmetic() {
        assert_eq!(optimality_gap(74.0, 74.0).unwrap(), 0.0);
        assert!((optimality_gap(87.0, 74.0).unwrap() - 13.0 / 74.0).abs() < 1e-15);
        assert!((optimality_gap(87.0, 74.0).unwrap() - 0.17568).abs() < 1e-5);
        assert_eq!(optimality_gap(0.0, 0.0).unwrap(), 0.0);
        assert!(matches!(optimality_gap(1.0, 0.0), Err(Error::UndefinedGap { .. })));
        assert_eq!(optimality_gap(74.0 * (1.0 - 1e-12), 74.0).unwrap(), 0.0);
        assert!(matches!(optimality_gap(70.0, 74.0), Err(Error::BelowReference { .. })));
    }

    #[test]
    fn clusters_and_canonical_labels() {
        let p = Partition::new(vec![7, 3, 7, 9]);
        assert_eq!(p.canonical().assignment, vec![0, 1, 0, 2]);
        assert_eq!(p.clusters(), vec![vec![0, 2], vec![1], vec![3]]);
        assert_eq!(Partition::from_clusters(4, &[vec![1, 2]]).assignment, vec![0, 1, 1, 2]);
        assert_eq!(p.separation(0, 2), 0);
        assert_eq!(p.separation(0, 1), 1);
    }
}
