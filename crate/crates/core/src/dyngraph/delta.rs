use std::collections::BTreeSet;

use super::snapshot::Snapshot;
use crate::error::{ensure, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// A weighted edge inside a delta. Deletions carry the weight they had at
/// `t-1`, insertions the weight at `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaEdge<T> {
    pub src: u32,
    pub dst: u32,
    pub weight: T,
}

/// Edge deletions (read against features at `t-1`) and insertions (read
/// against features at `t`) turning snapshot `t-1` into snapshot `t`.
///
/// A feature change of node `u` shows up as every out-edge of `u` being
/// deleted at `t-1` and re-inserted at `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaGraph<T> {
    pub t: usize,
    pub num_nodes: usize,
    pub deletions: Vec<DeltaEdge<T>>,
    pub insertions: Vec<DeltaEdge<T>>,
    /// Nodes whose feature rows differ between `t-1` and `t`, ascending.
    pub feature_changed: Vec<u32>,
}

impl<T: Scalar> DeltaGraph<T> {
    /// A delta that changes nothing.
    pub fn empty(t: usize, num_nodes: usize) -> Self {
        Self {
            t,
            num_nodes,
            deletions: Vec::new(),
            insertions: Vec::new(),
            feature_changed: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.deletions.is_empty() && self.insertions.is_empty()
    }

    /// Net structural edits, ignoring delete+insert pairs produced by feature
    /// changes: `(removed, added)` edge pairs, ascending.
    pub fn structural(&self) -> (Vec<(u32, u32)>, Vec<(u32, u32)>) {
        let del: BTreeSet<(u32, u32)> = self.deletions.iter().map(|e| (e.src, e.dst)).collect();
        let ins: BTreeSet<(u32, u32)> = self.insertions.iter().map(|e| (e.src, e.dst)).collect();
        (
            del.difference(&ins).copied().collect(),
            ins.difference(&del).copied().collect(),
        )
    }

    /// Applies the delta to an edge set: removes deletions, then adds insertions.
    pub fn apply_to_edges(&self, edges: &[(u32, u32)]) -> Vec<(u32, u32)> {
        let mut set: BTreeSet<(u32, u32)> = edges.iter().copied().collect();
        for e in &self.deletions {
            set.remove(&(e.src, e.dst));
        }
        for e in &self.insertions {
            set.insert((e.src, e.dst));
        }
        set.into_iter().collect()
    }

    /// Keeps only edges whose endpoints satisfy `keep`, remapped through `map`.
    pub fn restrict(&self, keep: impl Fn(u32, u32) -> bool) -> Self {
        let f = |v: &[DeltaEdge<T>]| v.iter().filter(|e| keep(e.src, e.dst)).copied().collect();
        Self {
            t: self.t,
            num_nodes: self.num_nodes,
            deletions: f(&self.deletions),
            insertions: f(&self.insertions),
            feature_changed: self.feature_changed.clone(),
        }
    }
}

fn rows_differ<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, r: usize) -> bool {
    // exact comparison: features are assigned, never recomputed
    a.row(r).iter().zip(b.row(r)).any(|(x, y)| x != y)
}

/// Deletions and insertions between two consecutive snapshots.
pub fn extract_delta<T: Scalar>(prev: &Snapshot<T>, curr: &Snapshot<T>) -> Result<DeltaGraph<T>> {
    ensure!(
        prev.num_nodes() == curr.num_nodes(),
        DimensionMismatch,
        "snapshots have {} and {} nodes",
        prev.num_nodes(),
        curr.num_nodes()
    );
    ensure!(
        prev.feature_dim() == curr.feature_dim(),
        DimensionMismatch,
        "snapshots have feature widths {} and {}",
        prev.feature_dim(),
        curr.feature_dim()
    );
    ensure!(
        prev.t() + 1 == curr.t(),
        InvalidArgument,
        "snapshots {} and {} are not consecutive",
        prev.t(),
        curr.t()
    );
    let n = prev.num_nodes();
    let changed: Vec<u32> = (0..n)
        .filter(|&u| rows_differ(prev.features(), curr.features(), u))
        .map(|u| u as u32)
        .collect();
    let mut is_changed = vec![false; n];
    for &u in &changed {
        is_changed[u as usize] = true;
    }

    let mut deletions = Vec::new();
    let mut insertions = Vec::new();
    for u in 0..n {
        let (a, b) = (prev.out_neighbors(u), curr.out_neighbors(u));
        if is_changed[u] {
            deletions.extend(a.iter().map(|&v| edge(prev, u, v)));
            insertions.extend(b.iter().map(|&v| edge(curr, u, v)));
            continue;
        }
        // merge the two sorted adjacency rows
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) if x == y => {
                    let (wp, wc) = (edge(prev, u, x), edge(curr, u, y));
                    if wp.weight != wc.weight {
                        deletions.push(wp);
                        insertions.push(wc);
                    }
                    i += 1;
                    j += 1;
                }
                (Some(&x), Some(&y)) if x < y => {
                    deletions.push(edge(prev, u, x));
                    i += 1;
                }
                (Some(&x), None) => {
                    deletions.push(edge(prev, u, x));
                    i += 1;
                }
                (_, Some(&y)) => {
                    insertions.push(edge(curr, u, y));
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
    }
    Ok(DeltaGraph {
        t: curr.t(),
        num_nodes: n,
        deletions,
        insertions,
        feature_changed: changed,
    })
}

fn edge<T: Scalar>(s: &Snapshot<T>, u: usize, v: u32) -> DeltaEdge<T> {
    DeltaEdge {
        src: u as u32,
        dst: v,
        weight: s.edge_weight(u, v as usize).unwrap_or_else(T::one),
    }
}

/// `(|deletions| + |insertions|) / (2 |E(base)|)`; `+inf` when the base has no edges.
pub fn change_ratio<T: Scalar>(delta: &DeltaGraph<T>, base: &Snapshot<T>) -> f64 {
    if base.num_edges() == 0 {
        return f64::INFINITY;
    }
    (delta.deletions.len() + delta.insertions.len()) as f64 / (2 * base.num_edges()) as f64
}
