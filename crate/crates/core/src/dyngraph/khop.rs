use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::delta::DeltaGraph;
use super::snapshot::Snapshot;
use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;

/// Per-hop neighbor limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fanout {
    Full,
    Max(usize),
}

impl Fanout {
    fn admits(self, degree: usize) -> bool {
        match self {
            Self::Full => true,
            Self::Max(f) => degree <= f,
        }
    }
}

impl FromStr for Fanout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(Self::Full);
        }
        match s.parse::<usize>() {
            Ok(f) if f > 0 => Ok(Self::Max(f)),
            _ => Err(Error::InvalidArgument(format!(
                "fanout {s:?} is neither a positive integer nor \"full\""
            ))),
        }
    }
}

impl fmt::Display for Fanout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Full => f.write_str("full"),
            Self::Max(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for Fanout {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Full => s.serialize_str("full"),
            Self::Max(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Fanout {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => format!("{n}").parse(),
            Raw::S(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// One hop of a computational graph: sampled in-neighbors per destination,
/// in compressed form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopBlock {
    /// Destination nodes, ascending.
    pub dst: Vec<u32>,
    offsets: Vec<usize>,
    src: Vec<u32>,
}

impl HopBlock {
    fn from_lists(dst: Vec<u32>, lists: Vec<Vec<u32>>) -> Self {
        let mut offsets = Vec::with_capacity(dst.len() + 1);
        offsets.push(0);
        let mut src = Vec::new();
        for l in lists {
            src.extend(l);
            offsets.push(src.len());
        }
        Self { dst, offsets, src }
    }

    /// Sampled sources of the `i`-th destination, ascending.
    pub fn sources_of(&self, i: usize) -> &[u32] {
        &self.src[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    /// `(src, dst)` pairs, grouped by destination.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.dst
            .iter()
            .enumerate()
            .flat_map(move |(i, &v)| self.sources_of(i).iter().map(move |&u| (u, v)))
    }

    /// Distinct sources, ascending.
    pub fn sources(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.src.iter().copied().collect();
        set.into_iter().collect()
    }

    pub fn max_in_degree(&self) -> usize {
        self.offsets
            .windows(2)
            .map(|w| w[1] - w[0])
            .max()
            .unwrap_or(0)
    }
}

/// Sampled k-hop neighborhood of a set of seed nodes at one timestep.
///
/// Hop `k` destinations are the seeds plus every source of hops `< k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComputationalGraph {
    pub t: usize,
    pub seeds: Vec<u32>,
    pub fanouts: Vec<Fanout>,
    pub sample_seed: u64,
    pub hops: Vec<HopBlock>,
}

impl ComputationalGraph {
    /// Every node reached: seeds plus all sources, ascending.
    pub fn nodes(&self) -> Vec<u32> {
        let mut set: BTreeSet<u32> = self.seeds.iter().copied().collect();
        for h in &self.hops {
            set.extend(h.src.iter().copied());
        }
        set.into_iter().collect()
    }

    /// Union of all hop edges as sorted, distinct `(src, dst)` pairs.
    pub fn edge_union(&self) -> Vec<(u32, u32)> {
        let set: BTreeSet<(u32, u32)> = self.hops.iter().flat_map(|h| h.edges()).collect();
        set.into_iter().collect()
    }

    fn from_hop_edges(
        t: usize,
        seeds: Vec<u32>,
        fanouts: Vec<Fanout>,
        sample_seed: u64,
        hop_edges: Vec<BTreeSet<(u32, u32)>>,
    ) -> Self {
        let mut dst: BTreeSet<u32> = seeds.iter().copied().collect();
        let mut hops = Vec::with_capacity(hop_edges.len());
        for edges in hop_edges {
            let order: Vec<u32> = dst.iter().copied().collect();
            let mut lists: Vec<Vec<u32>> = vec![Vec::new(); order.len()];
            for (u, v) in edges {
                let i = order
                    .binary_search(&v)
                    .expect("edge destination outside hop frontier");
                lists[i].push(u);
            }
            for l in &mut lists {
                l.sort_unstable();
            }
            dst.extend(lists.iter().flatten().copied());
            hops.push(HopBlock::from_lists(order, lists));
        }
        Self {
            t,
            seeds,
            fanouts,
            sample_seed,
            hops,
        }
    }
}

fn mix(seed: u64, t: usize, node: u32) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed
        ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (node as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_in_neighbors(neighbors: &[u32], fanout: Fanout, seed: u64, t: usize, v: u32) -> Vec<u32> {
    match fanout {
        Fanout::Max(f) if neighbors.len() > f => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, t, v));
            let mut picked: Vec<u32> = index::sample(&mut rng, neighbors.len(), f)
                .into_iter()
                .map(|i| neighbors[i])
                .collect();
            picked.sort_unstable();
            picked
        }
        _ => neighbors.to_vec(),
    }
}

fn check_seeds(seeds: &[u32], num_nodes: usize) -> Result<Vec<u32>> {
    ensure!(!seeds.is_empty(), InvalidArgument, "seed set is empty");
    if let Some(&bad) = seeds.iter().find(|&&s| s as usize >= num_nodes) {
        return Err(Error::NodeOutOfRange {
            node: bad as usize,
            num_nodes,
        });
    }
    let set: BTreeSet<u32> = seeds.iter().copied().collect();
    Ok(set.into_iter().collect())
}

/// Builds the computational graph of `seeds` on `snapshot`, sampling at most
/// `fanouts[k]` in-neighbors per destination at hop `k` without replacement.
///
/// The sample for node `v` is a pure function of `(seed, snapshot.t(), v)`
/// and `v`'s in-neighbor list.
pub fn khop<T: Scalar>(
    snapshot: &Snapshot<T>,
    seeds: &[u32],
    fanouts: &[Fanout],
    seed: u64,
) -> Result<ComputationalGraph> {
    let seeds = check_seeds(seeds, snapshot.num_nodes())?;
    let t = snapshot.t();
    let mut dst: BTreeSet<u32> = seeds.iter().copied().collect();
    let mut hops = Vec::with_capacity(fanouts.len());
    for &fanout in fanouts {
        let order: Vec<u32> = dst.iter().copied().collect();
        let lists: Vec<Vec<u32>> = order
            .iter()
            .map(|&v| sample_in_neighbors(snapshot.in_neighbors(v as usize), fanout, seed, t, v))
            .collect();
        dst.extend(lists.iter().flatten().copied());
        hops.push(HopBlock::from_lists(order, lists));
    }
    Ok(ComputationalGraph {
        t,
        seeds,
        fanouts: fanouts.to_vec(),
        sample_seed: seed,
        hops,
    })
}

/// Per-hop edge removals and additions turning one computational graph into
/// the next timestep's.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CgUpdate {
    pub t: usize,
    pub removed: Vec<Vec<(u32, u32)>>,
    pub added: Vec<Vec<(u32, u32)>>,
}

impl CgUpdate {
    pub fn is_empty(&self) -> bool {
        self.removed.iter().chain(&self.added).all(Vec::is_empty)
    }

    pub fn num_changes(&self) -> usize {
        self.removed.iter().chain(&self.added).map(Vec::len).sum()
    }

    pub fn apply(&self, prev: &ComputationalGraph) -> Result<ComputationalGraph> {
        ensure!(
            self.removed.len() == prev.hops.len() && self.added.len() == prev.hops.len(),
            DimensionMismatch,
            "update has {} hops, graph has {}",
            self.removed.len(),
            prev.hops.len()
        );
        let hop_edges = prev
            .hops
            .iter()
            .zip(self.removed.iter().zip(&self.added))
            .map(|(h, (rem, add))| {
                let mut set: BTreeSet<(u32, u32)> = h.edges().collect();
                for e in rem {
                    set.remove(e);
                }
                set.extend(add.iter().copied());
                set
            })
            .collect();
        Ok(ComputationalGraph::from_hop_edges(
            self.t,
            prev.seeds.clone(),
            prev.fanouts.clone(),
            prev.sample_seed,
            hop_edges,
        ))
    }
}

/// Derives the update from `prev` (built at `t-1`) to the computational graph
/// at `curr`, re-reading only destinations whose in-edges `delta` touches or
/// whose neighborhood is re-sampled at the new timestep.
pub fn khop_delta<T: Scalar>(
    prev: &ComputationalGraph,
    delta: &DeltaGraph<T>,
    curr: &Snapshot<T>,
) -> Result<CgUpdate> {
    ensure!(
        delta.t == prev.t + 1 && curr.t() == delta.t,
        InvalidArgument,
        "update from t={} needs a delta and snapshot at t={}",
        prev.t,
        prev.t + 1
    );
    let (removed, added) = delta.structural();
    let touched: HashSet<u32> = removed.iter().chain(&added).map(|&(_, v)| v).collect();
    let t = curr.t();
    let mut dst: BTreeSet<u32> = prev.seeds.iter().copied().collect();
    let mut update = CgUpdate {
        t,
        removed: Vec::new(),
        added: Vec::new(),
    };
    for (k, (&fanout, old)) in prev.fanouts.iter().zip(&prev.hops).enumerate() {
        let order: Vec<u32> = dst.iter().copied().collect();
        let lists: Vec<Vec<u32>> = order
            .iter()
            .map(|&v| {
                let neighbors = curr.in_neighbors(v as usize);
                let stable = !touched.contains(&v) && fanout.admits(neighbors.len());
                match old.dst.binary_search(&v) {
                    Ok(i) if stable => old.sources_of(i).to_vec(),
                    _ => sample_in_neighbors(neighbors, fanout, prev.sample_seed, t, v),
                }
            })
            .collect();
        dst.extend(lists.iter().flatten().copied());
        let new: BTreeSet<(u32, u32)> = order
            .iter()
            .zip(&lists)
            .flat_map(|(&v, l)| l.iter().map(move |&u| (u, v)))
            .collect();
        let before: BTreeSet<(u32, u32)> = old.edges().collect();
        update
            .removed
            .push(before.difference(&new).copied().collect());
        update
            .added
            .push(new.difference(&before).copied().collect());
        debug_assert_eq!(k + 1, update.added.len());
    }
    Ok(update)
}
