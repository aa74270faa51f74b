use std::collections::BTreeSet;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dyngraph::{
    extract_delta, khop, khop_delta, sliding_windows, ComputationalGraph, DeltaGraph, DynamicGraph,
    Fanout, SequenceWindow, Snapshot,
};
use crate::error::{ensure, Result};
use crate::nn::ModelConfig;
use crate::scalar::Scalar;

/// Disjoint, sorted node mini-batches: a seeded shuffle of `nodes` cut into
/// contiguous chunks. A batch size at or above the node count gives one batch.
pub fn make_batches(nodes: &[u32], batch_size: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut order = nodes.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
        .chunks(batch_size.max(1))
        .map(|c| {
            let mut c = c.to_vec();
            c.sort_unstable();
            c
        })
        .collect()
}

/// One mini-batch restricted to the nodes its sampled neighborhoods reach.
///
/// Snapshots are renumbered: node `i` is `nodes[i]`, timestep `i` is
/// `time.start + i`.
#[derive(Clone, Debug)]
pub struct BatchData<T> {
    pub nodes: Vec<u32>,
    /// Rows of the seed nodes, where the loss is measured.
    pub seed_rows: Vec<usize>,
    pub time: Range<usize>,
    pub snapshots: Vec<Snapshot<T>>,
    /// `deltas[i]` takes local snapshot `i - 1` to `i`; entry 0 is empty.
    pub deltas: Vec<DeltaGraph<T>>,
    /// Sampled neighborhoods per timestep, in global ids.
    pub cgs: Vec<ComputationalGraph>,
}

/// Samples the computational graph of `seeds` at every timestep of `time`:
/// from scratch at the first one, then by delta updates.
pub fn sample_neighborhoods<T: Scalar>(
    graph: &DynamicGraph<T>,
    seeds: &[u32],
    fanouts: &[Fanout],
    sample_seed: u64,
    time: Range<usize>,
) -> Result<Vec<ComputationalGraph>> {
    ensure!(
        time.start < time.end && time.end <= graph.len(),
        InvalidArgument,
        "time range {time:?} of {}",
        graph.len()
    );
    let mut cgs: Vec<ComputationalGraph> = Vec::with_capacity(time.len());
    for t in time {
        let cg = match cgs.last() {
            None => khop(graph.snapshot(t), seeds, fanouts, sample_seed)?,
            Some(prev) => {
                let delta = extract_delta(graph.snapshot(t - 1), graph.snapshot(t))?;
                khop_delta(prev, &delta, graph.snapshot(t))?.apply(prev)?
            }
        };
        cgs.push(cg);
    }
    Ok(cgs)
}

impl<T: Scalar> BatchData<T> {
    /// The batch graph at each timestep is the union of the sampled hop edges
    /// over the nodes reached at any timestep, plus a self-loop per node.
    pub fn build(
        graph: &DynamicGraph<T>,
        seeds: &[u32],
        fanouts: &[Fanout],
        sample_seed: u64,
        time: Range<usize>,
    ) -> Result<Self> {
        let cgs = sample_neighborhoods(graph, seeds, fanouts, sample_seed, time.clone())?;
        let universe: BTreeSet<u32> = cgs.iter().flat_map(|cg| cg.nodes()).collect();
        let nodes: Vec<u32> = universe.into_iter().collect();
        let local = |v: u32| nodes.binary_search(&v).expect("node in universe") as u32;
        let idx: Vec<usize> = nodes.iter().map(|&v| v as usize).collect();
        let mut snapshots = Vec::with_capacity(time.len());
        for (i, cg) in cgs.iter().enumerate() {
            let mut edges: BTreeSet<(u32, u32)> = cg
                .edge_union()
                .into_iter()
                .map(|(u, v)| (local(u), local(v)))
                .collect();
            edges.extend((0..nodes.len() as u32).map(|v| (v, v)));
            let feats = graph.snapshot(time.start + i).features().gather_rows(&idx);
            snapshots.push(Snapshot::new(i, edges.into_iter().collect(), feats)?);
        }
        let mut deltas = vec![DeltaGraph::empty(0, nodes.len())];
        for w in snapshots.windows(2) {
            deltas.push(extract_delta(&w[0], &w[1])?);
        }
        let seed_rows = seeds.iter().map(|&s| local(s) as usize).collect();
        Ok(Self {
            nodes,
            seed_rows,
            time,
            snapshots,
            deltas,
            cgs,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }
}

/// Everything one worker trains on: its mini-batches and windows over a
/// contiguous range of timesteps.
#[derive(Clone, Debug)]
pub struct TrainData<T> {
    pub batches: Vec<BatchData<T>>,
    /// Windows in local timesteps.
    pub windows: Vec<SequenceWindow>,
    pub feature_dim: usize,
    /// Steps per window that read first-layer inputs.
    pub input_steps: usize,
}

/// Offset mixed into the training seed for neighbor sampling.
const SAMPLE_SEED_SALT: u64 = 0x5eed_5a3b_1e00_0001;

impl<T: Scalar> TrainData<T> {
    /// Mini-batches over `nodes` (every node when `None`) and all windows that
    /// fit inside `time`.
    pub fn prepare(
        graph: &DynamicGraph<T>,
        model: &ModelConfig,
        batch_size: usize,
        stride: usize,
        seed: u64,
        time: Range<usize>,
        nodes: Option<&[u32]>,
    ) -> Result<Self> {
        let all: Vec<u32>;
        let nodes = match nodes {
            Some(n) => n,
            None => {
                all = (0..graph.num_nodes() as u32).collect();
                &all
            }
        };
        ensure!(!nodes.is_empty(), InvalidArgument, "no seed nodes");
        let windows = sliding_windows(time.len(), model.seq_len, stride, model.horizon);
        ensure!(
            !windows.is_empty(),
            InvalidArgument,
            "{} snapshots hold no window of {} inputs and {} targets",
            time.len(),
            model.seq_len,
            model.horizon
        );
        let batches = make_batches(nodes, batch_size, seed)
            .iter()
            .map(|seeds| {
                BatchData::build(
                    graph,
                    seeds,
                    &model.fanouts,
                    seed ^ SAMPLE_SEED_SALT,
                    time.clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let input_steps = if model.arch.is_integrated() {
            model.seq_len + model.horizon
        } else {
            model.seq_len
        };
        Ok(Self {
            batches,
            windows,
            feature_dim: graph.feature_dim(),
            input_steps,
        })
    }

    /// Elements of every first-layer input aggregation of the largest
    /// mini-batch over one window.
    pub fn data_units(&self) -> u64 {
        let n = self
            .batches
            .iter()
            .map(BatchData::num_nodes)
            .max()
            .unwrap_or(0);
        (self.input_steps * n * self.feature_dim) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyngraph::{synthesize, ChangeRatio, SynthParams};

    fn graph() -> DynamicGraph<f64> {
        synthesize(&SynthParams {
            num_nodes: 60,
            avg_degree: 3.0,
            feature_dim: 2,
            num_snapshots: 8,
            edge_change: ChangeRatio::Fixed(0.1),
            feature_change: ChangeRatio::Fixed(0.1),
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn batches_partition_the_nodes() {
        let nodes: Vec<u32> = (0..23).collect();
        let batches = make_batches(&nodes, 5, 9);
        assert_eq!(batches.len(), 5);
        let mut all: Vec<u32> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, nodes);
        assert_eq!(make_batches(&nodes, 5, 9), batches);
        assert_eq!(make_batches(&nodes, 100, 9).len(), 1);
    }

    #[test]
    fn batch_graphs_are_local_and_consistent() {
        let g = graph();
        let seeds = [1, 7, 30];
        let b = BatchData::build(&g, &seeds, &[Fanout::Max(3), Fanout::Max(2)], 4, 2..7).unwrap();
        assert_eq!(b.snapshots.len(), 5);
        for (i, s) in b.snapshots.iter().enumerate() {
            assert_eq!(s.t(), i);
            assert_eq!(s.num_nodes(), b.nodes.len());
            for v in 0..s.num_nodes() {
                assert!(s.has_edge(v, v));
                assert_eq!(
                    s.features().row(v),
                    g.snapshot(2 + i).features().row(b.nodes[v] as usize)
                );
            }
            for (u, v) in s.edge_pairs() {
                if u != v {
                    let (gu, gv) = (b.nodes[u as usize] as usize, b.nodes[v as usize] as usize);
                    assert!(g.snapshot(2 + i).has_edge(gu, gv));
                }
            }
        }
        for (&s, &r) in seeds.iter().zip(&b.seed_rows) {
            assert_eq!(b.nodes[r], s);
        }
        for w in b.snapshots.windows(2) {
            let d = extract_delta(&w[0], &w[1]).unwrap();
            assert_eq!(b.deltas[w[1].t()], d);
        }
    }

    #[test]
    fn data_units_count_input_steps() {
        let g = graph();
        let cfg = ModelConfig {
            seq_len: 3,
            horizon: 2,
            fanouts: vec![Fanout::Full],
            ..Default::default()
        };
        let data = TrainData::prepare(&g, &cfg, 20, 1, 0, 0..8, None).unwrap();
        assert_eq!(data.windows.len(), 4);
        assert_eq!(data.batches.len(), 3);
        let n = data.batches.iter().map(BatchData::num_nodes).max().unwrap();
        assert_eq!(data.data_units(), (5 * n * 2) as u64);
        assert!(TrainData::prepare(&g, &cfg, 20, 1, 0, 0..4, None).is_err());
    }
}
