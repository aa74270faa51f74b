//! Neighborhood aggregation from scratch and incrementally from the previous
//! timestep's result.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dyngraph::{DeltaEdge, DeltaGraph, Topology};
use crate::error::{ensure, Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggrKind {
    Sum,
    Mean,
    Max,
    Min,
}

impl AggrKind {
    pub const ALL: [AggrKind; 4] = [Self::Sum, Self::Mean, Self::Max, Self::Min];

    pub fn is_extremal(self) -> bool {
        matches!(self, Self::Max | Self::Min)
    }

    /// True when `candidate` should replace `current` as the extreme.
    fn beats(self, candidate: f64, current: f64) -> bool {
        match self {
            Self::Max => candidate > current,
            Self::Min => candidate < current,
            _ => false,
        }
    }
}

impl FromStr for AggrKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            "min" => Ok(Self::Min),
            _ => Err(Error::InvalidArgument(format!("unknown aggregation {s:?}"))),
        }
    }
}

impl fmt::Display for AggrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sum => "sum",
            Self::Mean => "mean",
            Self::Max => "max",
            Self::Min => "min",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeWeighting {
    #[default]
    None,
    /// Multiply each source row by the edge's stored weight.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AggrFn {
    kind: AggrKind,
    weighting: EdgeWeighting,
}

impl AggrFn {
    pub fn new(kind: AggrKind, weighting: EdgeWeighting) -> Result<Self> {
        ensure!(
            !(kind.is_extremal() && weighting == EdgeWeighting::Fixed),
            InvalidArgument,
            "edge weights are only defined for sum and mean"
        );
        Ok(Self { kind, weighting })
    }

    pub const fn unweighted(kind: AggrKind) -> Self {
        Self {
            kind,
            weighting: EdgeWeighting::None,
        }
    }

    pub fn kind(self) -> AggrKind {
        self.kind
    }

    pub fn weighting(self) -> EdgeWeighting {
        self.weighting
    }

    fn weight<T: Scalar>(self, w: T) -> f64 {
        match self.weighting {
            EdgeWeighting::None => 1.0,
            EdgeWeighting::Fixed => w.as_f64(),
        }
    }
}

impl From<AggrKind> for AggrFn {
    fn from(kind: AggrKind) -> Self {
        Self::unweighted(kind)
    }
}

const NO_EDGE: u32 = u32::MAX;

/// An aggregation over one timestep's in-edges.
///
/// Rows with no in-edges read as zero for every kind; for max/min they are
/// also flagged in [`AggResult::is_empty_row`].
#[derive(Clone, Debug, PartialEq)]
pub struct AggResult<T> {
    values: Matrix<T>,
    aggr: AggrFn,
    t: usize,
    num_edges: usize,
    /// Running weighted sums in double precision (sum and mean).
    sums: Option<Vec<f64>>,
    /// In-degree per target (mean).
    degree: Option<Vec<u32>>,
    /// Source node of the extremal edge per (target, dim), `NO_EDGE` when empty (max and min).
    argext: Option<Vec<u32>>,
    /// Incremental updates applied since the last full computation.
    steps_since_scratch: usize,
}

impl<T: Scalar> AggResult<T> {
    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn into_values(self) -> Matrix<T> {
        self.values
    }

    pub fn aggr(&self) -> AggrFn {
        self.aggr
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn degree(&self) -> Option<&[u32]> {
        self.degree.as_deref()
    }

    /// Source node recorded as the extreme for `(target, dim)`.
    pub fn argext(&self, target: usize, dim: usize) -> Option<u32> {
        let a = self.argext.as_ref()?;
        Some(a[target * self.values.cols() + dim]).filter(|&u| u != NO_EDGE)
    }

    pub fn is_empty_row(&self, target: usize) -> bool {
        match &self.argext {
            Some(a) => {
                let d = self.values.cols();
                d > 0 && a[target * d] == NO_EDGE
            }
            None => false,
        }
    }

    pub fn steps_since_scratch(&self) -> usize {
        self.steps_since_scratch
    }

    /// Element count of the payload.
    pub fn size_units(&self) -> usize {
        self.values.len()
    }

    fn finish(mut self) -> Self {
        let d = self.values.cols();
        match self.aggr.kind {
            AggrKind::Sum => {
                let sums = self.sums.as_ref().expect("sum keeps running sums");
                for (x, s) in self.values.as_mut_slice().iter_mut().zip(sums) {
                    *x = T::of_f64(*s);
                }
            }
            AggrKind::Mean => {
                let sums = self.sums.as_ref().expect("mean keeps running sums");
                let degree = self.degree.as_ref().expect("mean keeps degrees");
                for (v, &deg) in degree.iter().enumerate() {
                    let row = self.values.row_mut(v);
                    for (k, x) in row.iter_mut().enumerate() {
                        *x = if deg == 0 {
                            T::zero()
                        } else {
                            T::of_f64(sums[v * d + k] / deg as f64)
                        };
                    }
                }
            }
            AggrKind::Max | AggrKind::Min => {}
        }
        self
    }
}

/// Feature rows addressable by node id.
pub trait RowSource<T> {
    fn source_row(&self, u: usize) -> Option<&[T]>;
}

impl<T: Scalar> RowSource<T> for Matrix<T> {
    fn source_row(&self, u: usize) -> Option<&[T]> {
        (u < self.rows()).then(|| self.row(u))
    }
}

/// The previous timestep's feature rows that a delta's deletions read.
#[derive(Clone, Debug, Default)]
pub struct RetainedRows<T> {
    rows: HashMap<u32, Vec<T>>,
}

impl<T: Scalar> RetainedRows<T> {
    pub fn for_deletions(delta: &DeltaGraph<T>, prev_feats: &Matrix<T>) -> Self {
        let mut rows = HashMap::new();
        for e in &delta.deletions {
            rows.entry(e.src)
                .or_insert_with(|| prev_feats.row(e.src as usize).to_vec());
        }
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl<T: Scalar> RowSource<T> for RetainedRows<T> {
    fn source_row(&self, u: usize) -> Option<&[T]> {
        self.rows.get(&(u as u32)).map(Vec::as_slice)
    }
}

/// Aggregates `feats` over every in-edge of `graph` in the graph's edge order.
pub fn aggregate_scratch<T: Scalar, G: Topology<T>>(
    graph: &G,
    feats: &Matrix<T>,
    aggr: AggrFn,
) -> Result<AggResult<T>> {
    ensure!(
        feats.rows() >= graph.num_sources(),
        DimensionMismatch,
        "{} feature rows for {} source nodes",
        feats.rows(),
        graph.num_sources()
    );
    ensure!(
        aggr.weighting == EdgeWeighting::None || graph.is_weighted(),
        InvalidArgument,
        "fixed edge weighting on an unweighted graph"
    );
    let (n, d) = (graph.num_targets(), feats.cols());
    let mut res = AggResult {
        values: Matrix::zeros(n, d),
        aggr,
        t: graph.timestep(),
        num_edges: 0,
        sums: None,
        degree: None,
        argext: None,
        steps_since_scratch: 0,
    };
    let mut num_edges = 0;
    match aggr.kind {
        AggrKind::Sum | AggrKind::Mean => {
            let mut sums = vec![0.0f64; n * d];
            let mut degree = vec![0u32; n];
            graph.for_each_edge(|u, v, w| {
                num_edges += 1;
                degree[v] += 1;
                let w = aggr.weight(w);
                for (s, x) in sums[v * d..(v + 1) * d].iter_mut().zip(feats.row(u)) {
                    *s += w * x.as_f64();
                }
            });
            res.sums = Some(sums);
            if aggr.kind == AggrKind::Mean {
                res.degree = Some(degree);
            }
        }
        AggrKind::Max | AggrKind::Min => {
            let mut argext = vec![NO_EDGE; n * d];
            let values: &mut [T] = res.values.as_mut_slice();
            graph.for_each_edge(|u, v, _| {
                num_edges += 1;
                for (k, x) in feats.row(u).iter().enumerate() {
                    let i = v * d + k;
                    if argext[i] == NO_EDGE || aggr.kind.beats(x.as_f64(), values[i].as_f64()) {
                        values[i] = *x;
                        argext[i] = u as u32;
                    }
                }
            });
            res.argext = Some(argext);
        }
    }
    res.num_edges = num_edges;
    Ok(res.finish())
}

/// How [`aggregate_incremental`] produced its result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdatePath {
    Incremental,
    /// A deleted edge held an extreme.
    ArgextDeleted,
    /// The delta's change ratio exceeded the threshold.
    ChangeRatio,
    /// The periodic drift-bounding recomputation was due.
    Refresh,
}

impl UpdatePath {
    pub fn used_fallback(self) -> bool {
        self != Self::Incremental
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementalOptions {
    pub fallback_threshold: f64,
    /// Recompute from scratch after this many consecutive incremental steps.
    pub refresh_every: Option<usize>,
}

impl Default for IncrementalOptions {
    fn default() -> Self {
        Self {
            fallback_threshold: 0.5,
            refresh_every: Some(64),
        }
    }
}

/// Updates `prev` (timestep `t-1`) to timestep `t` by subtracting deleted
/// edges read against `prev_rows` and adding inserted edges read against
/// `curr_feats`.
///
/// `curr_graph` is only read when the update falls back to a full
/// recomputation, in which case the result equals [`aggregate_scratch`] on it.
pub fn aggregate_incremental<T: Scalar, G: Topology<T>>(
    prev: &AggResult<T>,
    prev_rows: &impl RowSource<T>,
    curr_graph: &G,
    curr_feats: &Matrix<T>,
    delta: &DeltaGraph<T>,
    opts: IncrementalOptions,
) -> Result<(AggResult<T>, UpdatePath)> {
    let aggr = prev.aggr;
    ensure!(
        delta.t == prev.t + 1,
        InvalidArgument,
        "delta for t={} applied to result at t={}",
        delta.t,
        prev.t
    );
    ensure!(
        curr_feats.cols() == prev.values.cols(),
        DimensionMismatch,
        "feature width {} for a result of width {}",
        curr_feats.cols(),
        prev.values.cols()
    );
    let missing = match aggr.kind {
        AggrKind::Sum => prev.sums.is_none().then_some("running sums"),
        AggrKind::Mean => {
            (prev.sums.is_none() || prev.degree.is_none()).then_some("running sums and degree")
        }
        AggrKind::Max | AggrKind::Min => prev.argext.is_none().then_some("extremal edge ids"),
    };
    if let Some(what) = missing {
        return Err(Error::MissingMetadata(what));
    }

    let scratch = |path| aggregate_scratch(curr_graph, curr_feats, aggr).map(|r| (r, path));
    let ratio = if prev.num_edges == 0 {
        if delta.is_empty() {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (delta.deletions.len() + delta.insertions.len()) as f64 / (2 * prev.num_edges) as f64
    };
    if ratio > opts.fallback_threshold {
        return scratch(UpdatePath::ChangeRatio);
    }
    if opts
        .refresh_every
        .is_some_and(|r| prev.steps_since_scratch + 1 >= r)
    {
        return scratch(UpdatePath::Refresh);
    }

    let d = prev.values.cols();
    let n = prev.values.rows();
    let sources = curr_feats.rows();
    let check = |e: &DeltaEdge<T>| -> Result<()> {
        if e.dst as usize >= n {
            return Err(Error::NodeOutOfRange {
                node: e.dst as usize,
                num_nodes: n,
            });
        }
        if e.src as usize >= sources {
            return Err(Error::NodeOutOfRange {
                node: e.src as usize,
                num_nodes: sources,
            });
        }
        Ok(())
    };
    let mut next = prev.clone();
    next.t = delta.t;
    next.steps_since_scratch += 1;
    next.num_edges =
        (prev.num_edges + delta.insertions.len()).saturating_sub(delta.deletions.len());

    match aggr.kind {
        AggrKind::Sum | AggrKind::Mean => {
            let sums = next.sums.as_mut().expect("checked above");
            for e in &delta.deletions {
                check(e)?;
                let row = prev_rows
                    .source_row(e.src as usize)
                    .ok_or(Error::MissingMetadata(
                        "previous features of a deleted edge's source",
                    ))?;
                let w = aggr.weight(e.weight);
                let v = e.dst as usize;
                for (s, x) in sums[v * d..(v + 1) * d].iter_mut().zip(row) {
                    *s -= w * x.as_f64();
                }
            }
            for e in &delta.insertions {
                check(e)?;
                let w = aggr.weight(e.weight);
                let v = e.dst as usize;
                for (s, x) in sums[v * d..(v + 1) * d]
                    .iter_mut()
                    .zip(curr_feats.row(e.src as usize))
                {
                    *s += w * x.as_f64();
                }
            }
            if let Some(degree) = next.degree.as_mut() {
                for e in &delta.deletions {
                    degree[e.dst as usize] -= 1;
                }
                for e in &delta.insertions {
                    degree[e.dst as usize] += 1;
                }
            }
            Ok((next.finish(), UpdatePath::Incremental))
        }
        AggrKind::Max | AggrKind::Min => {
            let argext = next.argext.as_mut().expect("checked above");
            for e in &delta.deletions {
                check(e)?;
                let v = e.dst as usize;
                if argext[v * d..(v + 1) * d].contains(&e.src) {
                    return scratch(UpdatePath::ArgextDeleted);
                }
            }
            let values: &mut [T] = next.values.as_mut_slice();
            for e in &delta.insertions {
                check(e)?;
                let v = e.dst as usize;
                for (k, x) in curr_feats.row(e.src as usize).iter().enumerate() {
                    let i = v * d + k;
                    if argext[i] == NO_EDGE || aggr.kind.beats(x.as_f64(), values[i].as_f64()) {
                        values[i] = *x;
                        argext[i] = e.src;
                    }
                }
            }
            Ok((next, UpdatePath::Incremental))
        }
    }
}

/// Gradient of the aggregation with respect to the source features.
///
/// Sum and mean scatter `upstream` to every source (mean divides by the
/// target's degree); max and min route it to the recorded extremal source.
pub fn aggregate_backward<T: Scalar, G: Topology<T>>(
    graph: &G,
    upstream: &Matrix<T>,
    forward: &AggResult<T>,
) -> Result<Matrix<T>> {
    ensure!(
        upstream.shape() == forward.values.shape(),
        DimensionMismatch,
        "upstream {:?} vs forward {:?}",
        upstream.shape(),
        forward.values.shape()
    );
    let aggr = forward.aggr;
    let d = upstream.cols();
    let mut grad = Matrix::zeros(graph.num_sources(), d);
    match aggr.kind {
        AggrKind::Sum | AggrKind::Mean => {
            let degree = match aggr.kind {
                AggrKind::Mean => Some(
                    forward
                        .degree
                        .as_ref()
                        .ok_or(Error::MissingMetadata("degree"))?,
                ),
                _ => None,
            };
            graph.for_each_edge(|u, v, w| {
                let mut scale = aggr.weight(w);
                if let Some(deg) = degree {
                    scale /= deg[v].max(1) as f64;
                }
                let scale = T::of_f64(scale);
                let up = upstream.row(v);
                for (g, x) in grad.row_mut(u).iter_mut().zip(up) {
                    *g += scale * *x;
                }
            });
        }
        AggrKind::Max | AggrKind::Min => {
            let argext = forward
                .argext
                .as_ref()
                .ok_or(Error::MissingMetadata("extremal edge ids"))?;
            for v in 0..upstream.rows() {
                for k in 0..d {
                    let u = argext[v * d + k];
                    if u != NO_EDGE {
                        grad[(u as usize, k)] += upstream[(v, k)];
                    }
                }
            }
        }
    }
    Ok(grad)
}
