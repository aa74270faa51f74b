use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::snapshot::{DynamicGraph, Snapshot};
use crate::error::{ensure, Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Per-step change ratio: a fixed fraction, or a fresh draw from (0, 1] per snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChangeRatio {
    Fixed(f64),
    #[serde(with = "uniform_tag")]
    Uniform,
}

mod uniform_tag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("uniform")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "uniform" {
            Ok(())
        } else {
            Err(D::Error::custom(format!(
                "expected a ratio or \"uniform\", got {s:?}"
            )))
        }
    }
}

impl ChangeRatio {
    fn draw(self, rng: &mut impl Rng) -> f64 {
        match self {
            Self::Fixed(r) => r,
            Self::Uniform => 1.0 - rng.gen::<f64>(),
        }
    }
}

impl FromStr for ChangeRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("uniform") {
            return Ok(Self::Uniform);
        }
        s.parse::<f64>().map(Self::Fixed).map_err(|_| {
            Error::InvalidArgument(format!(
                "change ratio {s:?} is neither a number nor \"uniform\""
            ))
        })
    }
}

impl fmt::Display for ChangeRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(r) => write!(f, "{r}"),
            Self::Uniform => f.write_str("uniform"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub num_nodes: usize,
    pub avg_degree: f64,
    pub feature_dim: usize,
    pub num_snapshots: usize,
    pub edge_change: ChangeRatio,
    pub feature_change: ChangeRatio,
    pub seed: u64,
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        ensure!(
            self.num_nodes > 0,
            InvalidArgument,
            "num_nodes must be positive"
        );
        ensure!(
            self.num_snapshots > 0,
            InvalidArgument,
            "T must be positive"
        );
        ensure!(
            self.feature_dim > 0,
            InvalidArgument,
            "feature_dim must be positive"
        );
        ensure!(
            self.avg_degree >= 1.0,
            InvalidArgument,
            "avg_degree must be at least 1, got {}",
            self.avg_degree
        );
        for r in [self.edge_change, self.feature_change] {
            if let ChangeRatio::Fixed(x) = r {
                ensure!(
                    (0.0..=1.0).contains(&x),
                    InvalidArgument,
                    "change ratio {x} outside [0, 1]"
                );
            }
        }
        Ok(())
    }
}

const GRID: f64 = (1u64 << 23) as f64;

/// A value in [-1, 1) on a 2^-23 grid. Every grid value is exact in f32, so
/// sums of a few thousand of them are exact in f64.
pub fn grid_value(rng: &mut impl Rng) -> f64 {
    rng.gen_range(0..1u32 << 24) as f64 / GRID - 1.0
}

fn random_features<T: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::of_f64(grid_value(rng)))
}

/// Draws `count` directed non-self-loop pairs absent from `existing`.
fn fresh_pairs(
    n: usize,
    count: usize,
    existing: &HashSet<(u32, u32)>,
    rng: &mut impl Rng,
) -> Vec<(u32, u32)> {
    let capacity = n * n.saturating_sub(1);
    let free = capacity - existing.len();
    let count = count.min(free);
    if count * 2 > free {
        let pool: Vec<(u32, u32)> = (0..n as u32)
            .flat_map(|u| (0..n as u32).map(move |v| (u, v)))
            .filter(|&(u, v)| u != v && !existing.contains(&(u, v)))
            .collect();
        return index::sample(rng, pool.len(), count)
            .into_iter()
            .map(|i| pool[i])
            .collect();
    }
    let mut picked = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.gen_range(0..n as u32);
        let v = rng.gen_range(0..n as u32);
        if u != v && !existing.contains(&(u, v)) && picked.insert((u, v)) {
            out.push((u, v));
        }
    }
    out
}

/// Generates a dynamic graph: a uniform random snapshot 0 followed by
/// `T - 1` steps of random edge rewiring and feature reassignment.
///
/// Each step changes `ceil(ratio * |E|)` edges, split as evenly as possible
/// between deletions and insertions, and reassigns features of
/// `ceil(ratio * N)` nodes. Features lie on a 2^-23 grid in [-1, 1).
pub fn synthesize<T: Scalar>(p: &SynthParams) -> Result<DynamicGraph<T>> {
    p.validate()?;
    let n = p.num_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let target_edges = ((n as f64 * p.avg_degree).round() as usize).min(n * (n - 1));

    let mut edges: HashSet<(u32, u32)> = HashSet::new();
    for e in fresh_pairs(n, target_edges, &edges, &mut rng) {
        edges.insert(e);
    }
    let base_edges = edges.len();
    let mut feats = random_features::<T>(n, p.feature_dim, &mut rng);
    let mut snapshots = vec![Snapshot::new(0, sorted(&edges), feats.clone())?];

    for t in 1..p.num_snapshots {
        let er = p.edge_change.draw(&mut rng);
        let fr = p.feature_change.draw(&mut rng);
        let changes = (er * edges.len() as f64).ceil() as usize;
        // the odd change goes to whichever side moves |E| back toward its base
        let mut deletions = changes / 2;
        if changes % 2 == 1 && edges.len() > base_edges {
            deletions += 1;
        }
        let current = sorted(&edges);
        let deletions = deletions.min(current.len());
        let removed: Vec<(u32, u32)> = index::sample(&mut rng, current.len(), deletions)
            .into_iter()
            .map(|i| current[i])
            .collect();
        let added = fresh_pairs(n, changes - deletions, &edges, &mut rng);
        for e in &removed {
            edges.remove(e);
        }
        edges.extend(added);

        let changed_nodes = ((fr * n as f64).ceil() as usize).min(n);
        let mut chosen = index::sample(&mut rng, n, changed_nodes).into_vec();
        chosen.sort_unstable();
        for u in chosen {
            for x in feats.row_mut(u) {
                *x = T::of_f64(grid_value(&mut rng));
            }
        }
        snapshots.push(Snapshot::new(t, sorted(&edges), feats.clone())?);
    }
    DynamicGraph::new(snapshots)
}

fn sorted(edges: &HashSet<(u32, u32)>) -> Vec<(u32, u32)> {
    let mut v: Vec<_> = edges.iter().copied().collect();
    v.sort_unstable();
    v
}
