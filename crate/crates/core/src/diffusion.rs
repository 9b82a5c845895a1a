//! Diffusion contributions.
//!
//! For every target worker `j` the requester holds a virtual credit
//! `π_{s,j} = α·φ̂_j`. Walking down the layers, each vertex `k` on a path to
//! `j` forwards `γ·π_{k,j}` split evenly over its `m_k^j` children that can
//! reach `j` (a child equal to `j` counts). A predecessor `i` of `j` collects
//! the sum of what its parents forward to it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::DataContribution;
use crate::network::{LayeredDag, WorkerId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid diffusion parameters: {0}")]
    InvalidParams(String),
    #[error("worker {0} is not in the layered graph")]
    UnknownWorker(WorkerId),
}

/// `m_k^j` for one target `j`: per vertex `k ∈ pred(j) ∪ {s}`, the number of
/// children of `k` that reach `j` or are `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachCount {
    pub target: WorkerId,
    pub counts: BTreeMap<WorkerId, usize>,
}

impl ReachCount {
    pub fn get(&self, k: WorkerId) -> Option<usize> {
        self.counts.get(&k).copied()
    }
}

pub fn reach_counts(dag: &LayeredDag, target: WorkerId) -> Result<ReachCount, DiffusionError> {
    if !dag.is_worker(target) {
        return Err(DiffusionError::UnknownWorker(target));
    }
    let ancestors = dag.ancestors(target);
    let counts = ancestors
        .iter()
        .map(|&k| {
            let m = dag
                .children(k)
                .iter()
                .filter(|c| **c == target || ancestors.contains(c))
                .count();
            (k, m)
        })
        .collect();
    Ok(ReachCount { target, counts })
}

/// Pairwise contributions `π_{i,j}`, including the requester's virtual row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiffusionMatrix {
    requester: Option<WorkerId>,
    entries: BTreeMap<(WorkerId, WorkerId), f64>,
}

impl DiffusionMatrix {
    /// `π_{i,j}`; zero for any pair not stored.
    pub fn get(&self, i: WorkerId, j: WorkerId) -> f64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0.0)
    }

    /// Nonzero-pattern entries `((i, j), π_{i,j})`, requester row included.
    pub fn entries(&self) -> impl Iterator<Item = ((WorkerId, WorkerId), f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    /// Entries paid to workers, i.e. without the requester's virtual row.
    pub fn worker_entries(&self) -> impl Iterator<Item = ((WorkerId, WorkerId), f64)> + '_ {
        let s = self.requester;
        self.entries().filter(move |((i, _), _)| Some(*i) != s)
    }

    /// `Σ_{i∈N} π_{i,j}`: everything predecessors of `j` collect from it.
    pub fn distributed_for(&self, j: WorkerId) -> f64 {
        self.worker_entries()
            .filter(|((_, t), _)| *t == j)
            .map(|(_, v)| v)
            .sum()
    }

    fn merge(&mut self, other: DiffusionMatrix) {
        self.entries.extend(other.entries);
    }
}

pub(crate) fn check_params(alpha: f64, gamma: f64) -> Result<(), DiffusionError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(DiffusionError::InvalidParams(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(DiffusionError::InvalidParams(format!(
            "gamma must lie in (0, 1/2], got {gamma}"
        )));
    }
    Ok(())
}

fn target_contributions(
    dag: &LayeredDag,
    target: WorkerId,
    phi_target: f64,
    alpha: f64,
    gamma: f64,
) -> DiffusionMatrix {
    let s = dag.requester();
    let reach = reach_counts(dag, target).expect("target taken from the dag");
    let mut entries = BTreeMap::new();
    entries.insert((s, target), alpha * phi_target);
    // Frontier sweep, one layer per step, from the requester down to the
    // target's layer. Updates are additive so order within a frontier is free.
    let mut frontier = vec![s];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &k in &frontier {
            let credit = entries[&(k, target)];
            let m = reach.counts[&k];
            for &c in dag.children(k) {
                if c == target || !reach.counts.contains_key(&c) {
                    continue;
                }
                let e = entries.entry((c, target)).or_insert_with(|| {
                    next.push(c);
                    0.0
                });
                *e += gamma * credit / m as f64;
            }
        }
        frontier = next;
    }
    DiffusionMatrix {
        requester: Some(s),
        entries,
    }
}

/// Diffusion contributions for every worker of the DAG.
pub fn diffusion_contributions(
    dag: &LayeredDag,
    phi: &DataContribution,
    alpha: f64,
    gamma: f64,
) -> Result<DiffusionMatrix, DiffusionError> {
    check_params(alpha, gamma)?;
    let mut out = DiffusionMatrix {
        requester: Some(dag.requester()),
        entries: BTreeMap::new(),
    };
    for target in dag.workers() {
        out.merge(target_contributions(
            dag,
            target,
            phi.get(target),
            alpha,
            gamma,
        ));
    }
    Ok(out)
}

/// `π_i = Σ_j π_{i,j}` for every worker appearing in the matrix; the
/// requester's virtual row is excluded.
pub fn total_diffusion(matrix: &DiffusionMatrix) -> BTreeMap<WorkerId, f64> {
    let mut totals = BTreeMap::new();
    for ((i, _), v) in matrix.worker_entries() {
        *totals.entry(i).or_insert(0.0) += v;
    }
    totals
}
