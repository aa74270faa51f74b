//! Aggregation lookups shared by every model: cache first, then the input
//! source or a scratch kernel, with counters for what actually ran.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aggregate::{
    aggregate_incremental, aggregate_scratch, AggResult, AggrFn, IncrementalOptions,
};
use crate::cache::{AggKey, CacheStore, ExecContext};
use crate::dyngraph::{DeltaGraph, Snapshot};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub type AggCache<T> = CacheStore<Arc<AggResult<T>>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecStats {
    /// Aggregations computed, from scratch or incrementally.
    pub kernel_invocations: u64,
    pub incremental_updates: u64,
    /// Incremental requests that recomputed from scratch instead.
    pub fallbacks: u64,
}

impl ExecStats {
    pub fn merge(&mut self, other: &ExecStats) {
        self.kernel_invocations += other.kernel_invocations;
        self.incremental_updates += other.incremental_updates;
        self.fallbacks += other.fallbacks;
    }
}

/// Produces the first-layer input aggregation of snapshot `t`.
pub trait InputSource<T: Scalar> {
    fn input_aggregation(&mut self, t: usize, stats: &mut ExecStats) -> Result<AggResult<T>>;
}

/// Aggregates every request from scratch.
pub struct ScratchInputs<'a, T> {
    snapshots: &'a [Snapshot<T>],
    aggr: AggrFn,
}

impl<'a, T: Scalar> ScratchInputs<'a, T> {
    pub fn new(snapshots: &'a [Snapshot<T>], aggr: AggrFn) -> Self {
        Self { snapshots, aggr }
    }
}

fn snapshot_at<T>(snapshots: &[Snapshot<T>], t: usize) -> Result<&Snapshot<T>> {
    snapshots.get(t).ok_or_else(|| {
        Error::InvalidArgument(format!("snapshot {t} requested of {}", snapshots.len()))
    })
}

impl<T: Scalar> InputSource<T> for ScratchInputs<'_, T> {
    fn input_aggregation(&mut self, t: usize, stats: &mut ExecStats) -> Result<AggResult<T>> {
        let g = snapshot_at(self.snapshots, t)?;
        stats.kernel_invocations += 1;
        aggregate_scratch(g, g.features(), self.aggr)
    }
}

/// Derives each aggregation from the most recently produced one when that
/// one is for the preceding timestep.
pub struct IncrementalInputs<'a, T> {
    snapshots: &'a [Snapshot<T>],
    /// `deltas[t]` takes snapshot `t - 1` to `t`; entry 0 is unused.
    deltas: &'a [DeltaGraph<T>],
    aggr: AggrFn,
    opts: IncrementalOptions,
    last: Option<AggResult<T>>,
}

impl<'a, T: Scalar> IncrementalInputs<'a, T> {
    pub fn new(
        snapshots: &'a [Snapshot<T>],
        deltas: &'a [DeltaGraph<T>],
        aggr: AggrFn,
        opts: IncrementalOptions,
    ) -> Self {
        Self {
            snapshots,
            deltas,
            aggr,
            opts,
            last: None,
        }
    }
}

impl<T: Scalar> InputSource<T> for IncrementalInputs<'_, T> {
    fn input_aggregation(&mut self, t: usize, stats: &mut ExecStats) -> Result<AggResult<T>> {
        let g = snapshot_at(self.snapshots, t)?;
        if let Some(last) = self.last.as_ref().filter(|l| l.t() == t) {
            return Ok(last.clone());
        }
        stats.kernel_invocations += 1;
        let next = match self.last.as_ref().filter(|l| t > 0 && l.t() + 1 == t) {
            Some(prev) => {
                let delta = self
                    .deltas
                    .get(t)
                    .ok_or_else(|| Error::InvalidArgument(format!("no delta into snapshot {t}")))?;
                let prev_feats = self.snapshots[t - 1].features();
                let (next, path) =
                    aggregate_incremental(prev, prev_feats, g, g.features(), delta, self.opts)?;
                if path.used_fallback() {
                    stats.fallbacks += 1;
                } else {
                    stats.incremental_updates += 1;
                }
                next
            }
            None => aggregate_scratch(g, g.features(), self.aggr)?,
        };
        self.last = Some(next.clone());
        Ok(next)
    }
}

/// What a missed lookup aggregates.
pub enum AggSource<'g, T> {
    /// First-layer input features of snapshot `t`, via the input source.
    Input(usize),
    /// An all-zero tensor of the given width over `graph`.
    Zeros { graph: &'g Snapshot<T>, dim: usize },
    /// A computed tensor (hidden state or prediction) over `graph`.
    Tensor {
        graph: &'g Snapshot<T>,
        feats: &'g Matrix<T>,
    },
}

/// Execution state of one sample: cache, input source and counters.
pub struct ExecEnv<'a, T: Scalar> {
    pub cache: Option<&'a mut AggCache<T>>,
    pub inputs: &'a mut dyn InputSource<T>,
    pub stats: ExecStats,
    pub batch: usize,
    /// Windows of the same mini-batch still to run after this one.
    pub windows_ahead: usize,
}

impl<'a, T: Scalar> ExecEnv<'a, T> {
    pub fn new(
        cache: Option<&'a mut AggCache<T>>,
        inputs: &'a mut dyn InputSource<T>,
        batch: usize,
        windows_ahead: usize,
    ) -> Self {
        Self {
            cache,
            inputs,
            stats: ExecStats::default(),
            batch,
            windows_ahead,
        }
    }

    fn compute(&mut self, aggr: AggrFn, src: &AggSource<'_, T>) -> Result<AggResult<T>> {
        match *src {
            AggSource::Input(t) => self.inputs.input_aggregation(t, &mut self.stats),
            AggSource::Zeros { graph, dim } => {
                self.stats.kernel_invocations += 1;
                aggregate_scratch(graph, &Matrix::zeros(graph.num_nodes(), dim), aggr)
            }
            AggSource::Tensor { graph, feats } => {
                self.stats.kernel_invocations += 1;
                aggregate_scratch(graph, feats, aggr)
            }
        }
    }

    /// Looks `key` up once per gate `1..=ctx.gates`, computing and inserting
    /// on every miss.
    pub fn fetch(
        &mut self,
        key: AggKey,
        ctx: ExecContext,
        aggr: AggrFn,
        src: AggSource<'_, T>,
    ) -> Result<Arc<AggResult<T>>> {
        let mut out = self.fetch_gated(&[(key, src)], ctx, aggr)?;
        Ok(out.swap_remove(0))
    }

    /// Gate by gate, looks up every key in order, as each gate's operators
    /// read their operands. Returns the first result per key.
    ///
    /// Without reuse each gate aggregates on its own; all results for a key
    /// are equal, so the first one stands for all.
    pub fn fetch_gated(
        &mut self,
        lookups: &[(AggKey, AggSource<'_, T>)],
        ctx: ExecContext,
        aggr: AggrFn,
    ) -> Result<Vec<Arc<AggResult<T>>>> {
        if ctx.gates == 0 {
            return Err(Error::InvalidArgument("lookup with zero gates".into()));
        }
        let mut first: Vec<Option<Arc<AggResult<T>>>> = vec![None; lookups.len()];
        for gate in 1..=ctx.gates {
            let gate_ctx = ExecContext { gate, ..ctx };
            for ((key, src), slot) in lookups.iter().zip(first.iter_mut()) {
                let hit = self.cache.as_deref_mut().and_then(|c| c.get(key));
                let agg = match hit {
                    Some(agg) => agg,
                    None => {
                        let agg = Arc::new(self.compute(aggr, src)?);
                        if let Some(cache) = self.cache.as_deref_mut() {
                            cache.put(
                                *key,
                                Arc::clone(&agg),
                                agg.size_units() as u64,
                                &gate_ctx,
                            )?;
                        }
                        agg
                    }
                };
                slot.get_or_insert(agg);
            }
        }
        Ok(first
            .into_iter()
            .map(|a| a.expect("at least one gate"))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::AggrKind;
    use crate::cache::{Part, Policy};
    use crate::dyngraph::{extract_delta, synthesize, ChangeRatio, SynthParams};

    fn graph() -> Vec<Snapshot<f64>> {
        let p = SynthParams {
            num_nodes: 40,
            avg_degree: 4.0,
            feature_dim: 3,
            num_snapshots: 6,
            edge_change: ChangeRatio::Fixed(0.1),
            feature_change: ChangeRatio::Fixed(0.1),
            seed: 5,
        };
        synthesize::<f64>(&p).unwrap().snapshots().to_vec()
    }

    fn ctx(gates: usize) -> ExecContext {
        ExecContext {
            layers: 1,
            gates,
            gate: 1,
            seq_len: 4,
            stride: 1,
            horizon: 0,
            idx: 0,
            part: Part::Encoder,
            layer: 1,
            teacher_forcing: false,
            windows_ahead: 0,
        }
    }

    #[test]
    fn incremental_inputs_equal_scratch_inputs() {
        let snaps = graph();
        let deltas: Vec<_> = std::iter::once(DeltaGraph::empty(0, 40))
            .chain(
                snaps
                    .windows(2)
                    .map(|w| extract_delta(&w[0], &w[1]).unwrap()),
            )
            .collect();
        for kind in AggrKind::ALL {
            let mut inc =
                IncrementalInputs::new(&snaps, &deltas, kind.into(), IncrementalOptions::default());
            let mut scratch = ScratchInputs::new(&snaps, kind.into());
            let mut si = ExecStats::default();
            let mut ss = ExecStats::default();
            for t in [0, 1, 2, 2, 3, 5, 4] {
                assert_eq!(
                    inc.input_aggregation(t, &mut si).unwrap().values(),
                    scratch.input_aggregation(t, &mut ss).unwrap().values()
                );
            }
            assert_eq!(si.kernel_invocations, 6);
            assert_eq!(si.incremental_updates + si.fallbacks, 3);
            assert_eq!(ss.kernel_invocations, 7);
        }
    }

    #[test]
    fn fetch_computes_once_per_key_with_a_cache() {
        let snaps = graph();
        let mut src = ScratchInputs::new(&snaps, AggrKind::Sum.into());
        let mut cache = AggCache::new(Policy::Reinc, u64::MAX).unwrap();
        let mut env = ExecEnv::new(Some(&mut cache), &mut src, 0, 0);
        let a = env
            .fetch(
                AggKey::input(0, 1),
                ctx(4),
                AggrKind::Sum.into(),
                AggSource::Input(1),
            )
            .unwrap();
        assert_eq!(env.stats.kernel_invocations, 1);
        assert_eq!(env.cache.as_ref().unwrap().stats().hits, 3);
        let mut plain = ScratchInputs::new(&snaps, AggrKind::Sum.into());
        let mut env = ExecEnv::new(None, &mut plain, 0, 0);
        let b = env
            .fetch(
                AggKey::input(0, 1),
                ctx(4),
                AggrKind::Sum.into(),
                AggSource::Input(1),
            )
            .unwrap();
        assert_eq!(env.stats.kernel_invocations, 4);
        assert_eq!(a.values(), b.values());
    }
}
