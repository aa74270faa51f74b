use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dyngraph::{sliding_windows, SequenceWindow};
use crate::error::{ensure, Error, Result};
use crate::nn::ModelConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Contiguous snapshot blocks per worker.
    #[default]
    ConsecutiveBlock,
    /// Node ranges per worker, every snapshot on every worker.
    NodePartition,
    /// Timesteps of each window dealt round-robin across workers.
    SequencePartition,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [
        Scheme::ConsecutiveBlock,
        Scheme::NodePartition,
        Scheme::SequencePartition,
    ];
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consecutive_block" => Ok(Self::ConsecutiveBlock),
            "node_partition" => Ok(Self::NodePartition),
            "sequence_partition" => Ok(Self::SequencePartition),
            _ => Err(Error::InvalidArgument(format!(
                "unknown placement scheme {s:?}"
            ))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ConsecutiveBlock => "consecutive_block",
            Self::NodePartition => "node_partition",
            Self::SequencePartition => "sequence_partition",
        })
    }
}

/// How a consecutive block obtains the snapshots its windows read beyond
/// the block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Copied in ahead of training; no traffic during the epoch.
    #[default]
    ReplicateOverlap,
    /// Fetched once per epoch and charged as snapshot traffic.
    RemoteFetch,
}

impl FromStr for OverlapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replicate_overlap" => Ok(Self::ReplicateOverlap),
            "remote_fetch" => Ok(Self::RemoteFetch),
            _ => Err(Error::InvalidArgument(format!(
                "unknown overlap mode {s:?}"
            ))),
        }
    }
}

impl fmt::Display for OverlapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ReplicateOverlap => "replicate_overlap",
            Self::RemoteFetch => "remote_fetch",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistConfig {
    pub workers: usize,
    pub scheme: Scheme,
    pub overlap: OverlapMode,
    /// Run workers on threads; sequential interleaving gives identical results.
    pub parallel: bool,
}

impl Default for DistConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            scheme: Scheme::default(),
            overlap: OverlapMode::default(),
            parallel: true,
        }
    }
}

/// `i`-th of `parts` contiguous ranges splitting `0..n`, earlier ranges one
/// longer when `n` does not divide evenly.
pub fn balanced_range(n: usize, parts: usize, i: usize) -> Range<usize> {
    let (base, rem) = (n / parts, n % parts);
    let start = i * base + i.min(rem);
    start..start + base + usize::from(i < rem)
}

/// Window chunks per worker under consecutive placement. A multiple of every
/// worker count in {1, 2, 4}, so those counts cut the windows identically.
pub fn chunk_count(workers: usize) -> usize {
    workers * 4usize.div_ceil(workers)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub worker: usize,
    /// Snapshots this worker stores.
    pub owned_snapshots: Range<usize>,
    /// Snapshots its windows read.
    pub needed_snapshots: Range<usize>,
    /// Window positions this worker aggregates, under sequence partitioning.
    pub window_slots: Vec<usize>,
    pub nodes: Range<u32>,
    /// Indices into [`WorkerPlan::chunks`].
    pub chunks: Range<usize>,
    /// Global window indices trained here.
    pub windows: Vec<usize>,
}

impl Assignment {
    /// Needed snapshots held by another worker.
    pub fn overlap_snapshots(&self) -> Vec<usize> {
        self.needed_snapshots
            .clone()
            .filter(|t| !self.owned_snapshots.contains(t))
            .collect()
    }

    pub fn owns_node(&self, v: u32) -> bool {
        self.nodes.contains(&v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerPlan {
    pub scheme: Scheme,
    pub overlap: OverlapMode,
    pub workers: usize,
    pub num_snapshots: usize,
    pub num_nodes: usize,
    /// Every window of the graph, in global timesteps.
    pub windows: Vec<SequenceWindow>,
    /// Consecutive window ranges trained as units; empty for other schemes.
    pub chunks: Vec<Range<usize>>,
    pub assignments: Vec<Assignment>,
}

impl WorkerPlan {
    /// Snapshots one window spans, targets included.
    pub fn window_span(&self) -> usize {
        self.windows.first().map_or(0, |w| w.len + w.horizon)
    }

    fn span_of(&self, windows: &Range<usize>) -> Range<usize> {
        if windows.is_empty() {
            return 0..0;
        }
        self.windows[windows.start].start..self.windows[windows.end - 1].start + self.window_span()
    }

    /// Snapshot range read by a chunk of windows.
    pub fn chunk_time(&self, chunk: usize) -> Range<usize> {
        self.span_of(&self.chunks[chunk])
    }
}

/// Places `num_snapshots` snapshots of `num_nodes` nodes on the configured
/// workers.
pub fn plan(
    cfg: &DistConfig,
    num_snapshots: usize,
    num_nodes: usize,
    model: &ModelConfig,
    stride: usize,
) -> Result<WorkerPlan> {
    let m = cfg.workers;
    ensure!(m >= 1, InvalidArgument, "worker count must be at least 1");
    ensure!(
        num_snapshots >= m,
        InvalidArgument,
        "{num_snapshots} snapshots for {m} workers"
    );
    ensure!(
        num_nodes >= m,
        InvalidArgument,
        "{num_nodes} nodes for {m} workers"
    );
    ensure!(stride >= 1, InvalidArgument, "stride must be at least 1");
    let windows = sliding_windows(num_snapshots, model.seq_len, stride, model.horizon);
    ensure!(
        !windows.is_empty(),
        InvalidArgument,
        "{num_snapshots} snapshots hold no window"
    );
    let all_nodes = 0..num_nodes as u32;
    let all_windows: Vec<usize> = (0..windows.len()).collect();
    let mut p = WorkerPlan {
        scheme: cfg.scheme,
        overlap: cfg.overlap,
        workers: m,
        num_snapshots,
        num_nodes,
        windows,
        chunks: Vec::new(),
        assignments: Vec::with_capacity(m),
    };
    match cfg.scheme {
        Scheme::ConsecutiveBlock => {
            let g = chunk_count(m);
            let r = p.windows.len();
            p.chunks = (0..g).map(|i| i * r / g..(i + 1) * r / g).collect();
            for w in 0..m {
                let chunks = w * g / m..(w + 1) * g / m;
                let windows = p.chunks[chunks.start].start..p.chunks[chunks.end - 1].end;
                p.assignments.push(Assignment {
                    worker: w,
                    owned_snapshots: balanced_range(num_snapshots, m, w),
                    needed_snapshots: p.span_of(&windows),
                    window_slots: Vec::new(),
                    nodes: all_nodes.clone(),
                    chunks,
                    windows: windows.collect(),
                });
            }
        }
        Scheme::NodePartition => {
            for w in 0..m {
                let nodes = balanced_range(num_nodes, m, w);
                p.assignments.push(Assignment {
                    worker: w,
                    owned_snapshots: 0..num_snapshots,
                    needed_snapshots: 0..num_snapshots,
                    window_slots: Vec::new(),
                    nodes: nodes.start as u32..nodes.end as u32,
                    chunks: 0..0,
                    windows: all_windows.clone(),
                });
            }
        }
        Scheme::SequencePartition => {
            let span = p.window_span();
            for w in 0..m {
                p.assignments.push(Assignment {
                    worker: w,
                    owned_snapshots: 0..num_snapshots,
                    needed_snapshots: 0..num_snapshots,
                    window_slots: (w..span).step_by(m).collect(),
                    nodes: all_nodes.clone(),
                    chunks: 0..0,
                    windows: all_windows.clone(),
                });
            }
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(l: usize, h: usize) -> ModelConfig {
        ModelConfig {
            seq_len: l,
            horizon: h,
            ..Default::default()
        }
    }

    fn consecutive(m: usize) -> DistConfig {
        DistConfig {
            workers: m,
            ..Default::default()
        }
    }

    #[test]
    fn even_blocks() {
        let p = plan(&consecutive(4), 12, 10, &model(2, 1), 1).unwrap();
        let blocks: Vec<_> = p
            .assignments
            .iter()
            .map(|a| a.owned_snapshots.clone())
            .collect();
        assert_eq!(blocks, vec![0..3, 3..6, 6..9, 9..12]);
    }

    #[test]
    fn uneven_blocks() {
        let p = plan(&consecutive(4), 10, 10, &model(2, 1), 1).unwrap();
        let sizes: Vec<_> = p
            .assignments
            .iter()
            .map(|a| a.owned_snapshots.len())
            .collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
        let counts: Vec<_> = p.assignments.iter().map(|a| a.windows.len()).collect();
        assert_eq!(counts, vec![2, 2, 2, 2]);
    }

    #[test]
    fn single_worker_owns_everything() {
        for scheme in Scheme::ALL {
            let p = plan(
                &DistConfig {
                    scheme,
                    ..Default::default()
                },
                9,
                7,
                &model(3, 2),
                1,
            )
            .unwrap();
            let a = &p.assignments[0];
            assert_eq!(a.owned_snapshots, 0..9);
            assert!(a.overlap_snapshots().is_empty());
            assert_eq!(a.nodes, 0..7);
            assert_eq!(a.windows.len(), p.windows.len());
        }
    }

    #[test]
    fn rejects_more_workers_than_snapshots() {
        assert!(plan(&consecutive(4), 3, 10, &model(1, 1), 1).is_err());
    }

    #[test]
    fn sequence_slots_deal_round_robin() {
        let p = plan(
            &DistConfig {
                workers: 2,
                scheme: Scheme::SequencePartition,
                ..Default::default()
            },
            10,
            4,
            &model(3, 2),
            1,
        )
        .unwrap();
        assert_eq!(p.assignments[0].window_slots, vec![0, 2, 4]);
        assert_eq!(p.assignments[1].window_slots, vec![1, 3]);
    }

    #[test]
    fn worker_counts_one_two_four_share_chunks() {
        let chunks: Vec<_> = [1, 2, 4]
            .iter()
            .map(|&m| {
                plan(&consecutive(m), 23, 8, &model(3, 2), 1)
                    .unwrap()
                    .chunks
            })
            .collect();
        assert_eq!(chunks[0], chunks[1]);
        assert_eq!(chunks[0], chunks[2]);
    }

    proptest! {
        #[test]
        fn consecutive_blocks_tile_and_balance(t in 1usize..60, m in 1usize..8, l in 1usize..5, h in 1usize..3, s in 1usize..3) {
            prop_assume!(t >= m && t >= l + h);
            let p = plan(&consecutive(m), t, m, &model(l, h), s).unwrap();
            let mut next = 0;
            for a in &p.assignments {
                prop_assert_eq!(a.owned_snapshots.start, next);
                next = a.owned_snapshots.end;
            }
            prop_assert_eq!(next, t);
            let sizes: Vec<_> = p.assignments.iter().map(|a| a.owned_snapshots.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let counts: Vec<_> = p.assignments.iter().map(|a| a.windows.len()).collect();
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            let all: Vec<usize> = p.assignments.iter().flat_map(|a| a.windows.clone()).collect();
            prop_assert_eq!(all, (0..p.windows.len()).collect::<Vec<_>>());
        }

        #[test]
        fn node_ranges_partition(n in 1usize..200, m in 1usize..9) {
            prop_assume!(n >= m);
            let p = plan(&DistConfig { workers: m, scheme: Scheme::NodePartition, ..Default::default() }, 10, n, &model(2, 1), 1).unwrap();
            let mut next = 0;
            for a in &p.assignments {
                prop_assert_eq!(a.nodes.start, next);
                prop_assert!(!a.nodes.is_empty());
                next = a.nodes.end;
            }
            prop_assert_eq!(next as usize, n);
        }
    }
}
