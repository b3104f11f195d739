//! Exact solvers.
//!
//! [`solve_exact_dp`] maximizes total cluster savings over set partitions with
//! a subset dynamic program. [`brute_force_reference`] enumerates every set
//! partition and is kept independent of the DP so the two can check each
//! other.

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::objective::{self, Partition};

/// Largest instance the DP accepts unless the caller overrides it.
pub const DEFAULT_EXACT_CAP: usize = 18;

/// Largest instance the brute-force enumerator accepts.
pub const BRUTE_FORCE_CAP: usize = 10;

/// Clique validity and savings for every subset of sites, indexed by bitmask.
#[derive(Clone, Debug)]
pub struct CliqueTable {
    n: usize,
    near_mask: Vec<u32>,
    valid: Vec<bool>,
    savings: Vec<f64>,
}

impl CliqueTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_valid(&self, mask: u32) -> bool {
        self.valid[mask as usize]
    }

    pub fn savings(&self, mask: u32) -> f64 {
        self.savings[mask as usize]
    }

    /// Bitmask of sites strictly closer than the threshold to `node`.
    pub fn near_neighbors(&self, node: usize) -> u32 {
        self.near_mask[node]
    }
}

pub fn mask_of(nodes: &[usize]) -> u32 {
    nodes.iter().fold(0, |m, &i| m | (1 << i))
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    // Masks are u32 and the tables are 2^n long.
    let cap = cap.min(30);
    if n > cap {
        return Err(Error::SizeLimit { n, cap });
    }
    Ok(())
}

pub fn build_clique_table(inst: &Instance, cap: usize) -> Result<CliqueTable> {
    let n = inst.n();
    check_cap(n, cap)?;
    let d_max = inst.threshold();
    let near_mask: Vec<u32> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && inst.is_near(i, j)).fold(0, |m, j| m | (1 << j)))
        .collect();

    let size = 1usize << n;
    let mut valid = vec![false; size];
    let mut savings = vec![0.0; size];
    valid[0] = true;
    for s in 1..size {
        let top = usize::BITS - 1 - s.leading_zeros();
        let rest = s ^ (1 << top);
        if !valid[rest] || (rest as u32 & !near_mask[top as usize]) != 0 {
            continue;
        }
        valid[s] = true;
        let mut gain = savings[rest];
        let mut bits = rest;
        while bits != 0 {
            let u = bits.trailing_zeros() as usize;
            gain += d_max - inst.d(u, top as usize);
            bits &= bits - 1;
        }
        savings[s] = gain;
    }
    Ok(CliqueTable {
        n,
        near_mask,
        valid,
        savings,
    })
}

/// Optimal partition and its objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactSolution {
    pub partition: Partition,
    pub objective: f64,
    pub total_savings: f64,
}

pub fn solve_exact_dp(inst: &Instance) -> Result<ExactSolution> {
    solve_exact_dp_with_cap(inst, DEFAULT_EXACT_CAP)
}

pub fn solve_exact_dp_with_cap(inst: &Instance, cap: usize) -> Result<ExactSolution> {
    let table = build_clique_table(inst, cap)?;
    let n = inst.n();
    let size = 1usize << n;
    let mut best = vec![0.0_f64; size];
    let mut choice = vec![0u32; size];

    for s in 1..size {
        let low = s & s.wrapping_neg();
        let low_idx = low.trailing_zeros() as usize;
        // The block holding the lowest site is a clique containing it, so it
        // lives inside that site's near neighbourhood.
        let candidates = (s ^ low) & table.near_mask[low_idx] as usize;
        let mut top_value = f64::NEG_INFINITY;
        let mut top_block = 0usize;
        let mut sub = candidates;
        loop {
            let block = sub | low;
            if table.valid[block] {
                let value = table.savings[block] + best[s ^ block];
                if value > top_value {
                    top_value = value;
                    top_block = block;
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & candidates;
        }
        best[s] = top_value;
        choice[s] = top_block as u32;
    }

    let mut assignment = vec![0; n];
    let mut rest = size - 1;
    let mut label = 0;
    while rest != 0 {
        let mut block = choice[rest] as usize;
        rest ^= block;
        while block != 0 {
            assignment[block.trailing_zeros() as usize] = label;
            block &= block - 1;
        }
        label += 1;
    }
    let total_savings = best[size - 1];
    Ok(ExactSolution {
        partition: Partition::new(assignment).canonical(),
        objective: objective::singleton_objective(inst) - total_savings,
        total_savings,
    })
}

/// Minimum objective over all feasible set partitions, by exhaustive enumeration.
pub fn brute_force_reference(inst: &Instance) -> Result<f64> {
    let n = inst.n();
    if n > BRUTE_FORCE_CAP {
        return Err(Error::SizeLimit {
            n,
            cap: BRUTE_FORCE_CAP,
        });
    }
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    // Restricted growth strings: labels[0] = 0, labels[i] <= 1 + max(labels[..i]).
    let mut prefix_max = vec![0usize; n];
    loop {
        let p = Partition::new(labels.clone());
        if objective::is_feasible(inst, &p)? {
            best = best.min(objective::evaluate(inst, &p)?);
        }
        // Advance to the next restricted growth string.
        let mut i = n;
        loop {
            if i <= 1 {
                return Ok(best);
            }
            i -= 1;
            if labels[i] <= prefix_max[i - 1] {
                labels[i] += 1;
                prefix_max[i] = prefix_max[i - 1].max(labels[i]);
                for k in i + 1..n {
                    labels[k] = 0;
                    prefix_max[k] = prefix_max[i];
                }
                break;
            }
        }
    }
}
