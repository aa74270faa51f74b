use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use super::plan::balanced_range;
use crate::error::{ensure, Result};
use crate::nn::Grads;
use crate::scalar::Scalar;

/// Bytes sent, by category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommBytes {
    /// Features of nodes owned by another worker.
    pub remote_features: u64,
    /// Layer outputs moved between the timestep and node layouts.
    pub intermediate_redistribution: u64,
    pub gradient_sync: u64,
    /// Snapshots read from another worker's block.
    pub snapshot_fetch: u64,
}

impl CommBytes {
    pub fn total(&self) -> u64 {
        self.remote_features
            + self.intermediate_redistribution
            + self.gradient_sync
            + self.snapshot_fetch
    }
}

impl AddAssign for CommBytes {
    fn add_assign(&mut self, o: Self) {
        self.remote_features += o.remote_features;
        self.intermediate_redistribution += o.intermediate_redistribution;
        self.gradient_sync += o.gradient_sync;
        self.snapshot_fetch += o.snapshot_fetch;
    }
}

/// Bytes sent by each worker.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub per_worker: Vec<CommBytes>,
}

impl CommLedger {
    pub fn new(workers: usize) -> Self {
        Self {
            per_worker: vec![CommBytes::default(); workers],
        }
    }

    pub fn charge(&mut self, worker: usize, bytes: CommBytes) {
        self.per_worker[worker] += bytes;
    }

    pub fn total(&self) -> CommBytes {
        let mut t = CommBytes::default();
        for w in &self.per_worker {
            t += *w;
        }
        t
    }

    pub fn merge(&mut self, other: &CommLedger) {
        if self.per_worker.len() < other.per_worker.len() {
            self.per_worker
                .resize(other.per_worker.len(), CommBytes::default());
        }
        for (a, b) in self.per_worker.iter_mut().zip(&other.per_worker) {
            *a += *b;
        }
    }
}

/// Bytes each worker sends in one ring all-reduce of `elements` values.
///
/// The buffer is cut into one chunk per worker. Reduce-scatter and
/// all-gather each take `workers - 1` rounds; in every round a worker
/// forwards one chunk to its successor. Totals `2 (M-1)` buffers, about
/// `2 (M-1) / M` of a buffer per worker.
pub fn ring_allreduce_bytes(elements: usize, workers: usize, elem_bytes: usize) -> Vec<u64> {
    let chunk = |c: usize| balanced_range(elements, workers, c).len();
    (0..workers)
        .map(|m| {
            let mut sent = 0;
            for round in 0..workers.saturating_sub(1) {
                sent += chunk((m + workers - round) % workers);
                sent += chunk((m + 1 + workers - round) % workers);
            }
            (sent * elem_bytes) as u64
        })
        .collect()
}

/// Left-fold sum of `contributions` in the given order, divided by `divisor`.
pub fn ordered_mean<T: Scalar>(contributions: &[&Grads<T>], divisor: usize) -> Result<Grads<T>> {
    ensure!(
        !contributions.is_empty(),
        InvalidArgument,
        "no gradients to combine"
    );
    ensure!(divisor >= 1, InvalidArgument, "zero divisor");
    let first = contributions[0];
    for g in &contributions[1..] {
        ensure!(
            g.len() == first.len() && g.iter().zip(first).all(|(a, b)| a.shape() == b.shape()),
            DimensionMismatch,
            "gradient shapes differ across workers"
        );
    }
    let mut sum = first.clone();
    for g in &contributions[1..] {
        for (s, x) in sum.iter_mut().zip(g.iter()) {
            s.add_assign(x)?;
        }
    }
    let d = T::of_f64(divisor as f64);
    for s in &mut sum {
        s.as_mut_slice().iter_mut().for_each(|v| *v /= d);
    }
    Ok(sum)
}

/// Ordered sum over workers, worker 0 first, divided by the worker count;
/// every worker receives the same copy.
pub fn allreduce_sim<T: Scalar>(grads: &[Grads<T>]) -> Result<Vec<Grads<T>>> {
    let refs: Vec<&Grads<T>> = grads.iter().collect();
    let mean = ordered_mean(&refs, grads.len())?;
    Ok(vec![mean; grads.len()])
}
