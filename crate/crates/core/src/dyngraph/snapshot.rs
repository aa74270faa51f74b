use crate::error::{ensure, Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Something aggregation can run over: a directed edge set from source rows
/// into target rows.
pub trait Topology<T: Scalar> {
    fn num_sources(&self) -> usize;
    fn num_targets(&self) -> usize;
    fn is_weighted(&self) -> bool;
    /// Timestep the edges belong to.
    fn timestep(&self) -> usize {
        0
    }
    /// Visits every edge as `(src, dst, weight)` in a fixed order.
    fn for_each_edge(&self, f: impl FnMut(usize, usize, T));
}

/// One timestep of a discrete dynamic graph.
///
/// Out-edges are kept in compressed row form sorted by `(src, dst)`; the
/// in-edge view is built once at construction for neighbor sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T> {
    t: usize,
    num_nodes: usize,
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    weights: Option<Vec<T>>,
    in_ptr: Vec<usize>,
    in_src: Vec<u32>,
    features: Matrix<T>,
}

impl<T: Scalar> Snapshot<T> {
    pub fn new(t: usize, edges: Vec<(u32, u32)>, features: Matrix<T>) -> Result<Self> {
        Self::build(
            t,
            edges.into_iter().map(|(s, d)| (s, d, None)).collect(),
            false,
            features,
        )
    }

    pub fn with_weights(t: usize, edges: Vec<(u32, u32, T)>, features: Matrix<T>) -> Result<Self> {
        Self::build(
            t,
            edges.into_iter().map(|(s, d, w)| (s, d, Some(w))).collect(),
            true,
            features,
        )
    }

    fn build(
        t: usize,
        mut edges: Vec<(u32, u32, Option<T>)>,
        weighted: bool,
        features: Matrix<T>,
    ) -> Result<Self> {
        let num_nodes = features.rows();
        for &(s, d, _) in &edges {
            for n in [s, d] {
                if n as usize >= num_nodes {
                    return Err(Error::NodeOutOfRange {
                        node: n as usize,
                        num_nodes,
                    });
                }
            }
        }
        edges.sort_by_key(|&(s, d, _)| (s, d));
        if let Some(w) = edges
            .windows(2)
            .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
        {
            return Err(Error::InvalidArgument(format!(
                "duplicate edge {}->{} in snapshot {t}",
                w[0].0, w[0].1
            )));
        }
        let mut row_ptr = vec![0usize; num_nodes + 1];
        for &(s, _, _) in &edges {
            row_ptr[s as usize + 1] += 1;
        }
        for i in 0..num_nodes {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col: Vec<u32> = edges.iter().map(|e| e.1).collect();
        let weights = weighted.then(|| edges.iter().map(|e| e.2.unwrap_or_else(T::one)).collect());

        let mut in_ptr = vec![0usize; num_nodes + 1];
        for &d in &col {
            in_ptr[d as usize + 1] += 1;
        }
        for i in 0..num_nodes {
            in_ptr[i + 1] += in_ptr[i];
        }
        let mut fill = in_ptr.clone();
        let mut in_src = vec![0u32; col.len()];
        for (s, d, _) in &edges {
            let slot = &mut fill[*d as usize];
            in_src[*slot] = *s;
            *slot += 1;
        }
        Ok(Self {
            t,
            num_nodes,
            row_ptr,
            col,
            weights,
            in_ptr,
            in_src,
            features,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.col.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn weights(&self) -> Option<&[T]> {
        self.weights.as_deref()
    }

    pub fn out_neighbors(&self, u: usize) -> &[u32] {
        &self.col[self.row_ptr[u]..self.row_ptr[u + 1]]
    }

    /// In-neighbors of `v`, ascending.
    pub fn in_neighbors(&self, v: usize) -> &[u32] {
        &self.in_src[self.in_ptr[v]..self.in_ptr[v + 1]]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.out_neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    pub fn edge_weight(&self, u: usize, v: usize) -> Option<T> {
        let start = self.row_ptr[u];
        let pos = self.out_neighbors(u).binary_search(&(v as u32)).ok()?;
        Some(self.weights.as_ref().map_or(T::one(), |w| w[start + pos]))
    }

    /// Edges as `(src, dst, weight)`, ascending by `(src, dst)`.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, T)> + '_ {
        (0..self.num_nodes).flat_map(move |u| {
            (self.row_ptr[u]..self.row_ptr[u + 1]).map(move |e| {
                (
                    u as u32,
                    self.col[e],
                    self.weights.as_ref().map_or(T::one(), |w| w[e]),
                )
            })
        })
    }

    pub fn edge_pairs(&self) -> Vec<(u32, u32)> {
        self.edges().map(|(s, d, _)| (s, d)).collect()
    }

    /// Same structure, new timestep index.
    pub fn with_t(mut self, t: usize) -> Self {
        self.t = t;
        self
    }

    pub fn with_features(&self, features: Matrix<T>) -> Result<Self> {
        ensure!(
            features.rows() == self.num_nodes,
            DimensionMismatch,
            "{} feature rows for {} nodes",
            features.rows(),
            self.num_nodes
        );
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    pub fn cast<U: Scalar>(&self) -> Snapshot<U> {
        Snapshot {
            t: self.t,
            num_nodes: self.num_nodes,
            row_ptr: self.row_ptr.clone(),
            col: self.col.clone(),
            weights: self
                .weights
                .as_ref()
                .map(|w| w.iter().map(|&x| U::of_f64(x.as_f64())).collect()),
            in_ptr: self.in_ptr.clone(),
            in_src: self.in_src.clone(),
            features: self.features.cast(),
        }
    }
}

impl<T: Scalar> Topology<T> for Snapshot<T> {
    fn num_sources(&self) -> usize {
        self.num_nodes
    }

    fn num_targets(&self) -> usize {
        self.num_nodes
    }

    fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    fn timestep(&self) -> usize {
        self.t
    }

    fn for_each_edge(&self, mut f: impl FnMut(usize, usize, T)) {
        for (s, d, w) in self.edges() {
            f(s as usize, d as usize, w);
        }
    }
}

/// Ordered snapshots sharing one node count and feature width.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicGraph<T> {
    snapshots: Vec<Snapshot<T>>,
    feature_dim: usize,
}

impl<T: Scalar> DynamicGraph<T> {
    pub fn new(snapshots: Vec<Snapshot<T>>) -> Result<Self> {
        ensure!(
            !snapshots.is_empty(),
            InvalidArgument,
            "a dynamic graph needs at least one snapshot"
        );
        let n = snapshots[0].num_nodes();
        let d = snapshots[0].feature_dim();
        ensure!(d > 0, InvalidArgument, "feature_dim must be positive");
        for (i, s) in snapshots.iter().enumerate() {
            ensure!(
                s.t() == i,
                InvalidArgument,
                "snapshot {i} carries t={}",
                s.t()
            );
            ensure!(
                s.num_nodes() == n && s.feature_dim() == d,
                DimensionMismatch,
                "snapshot {i} is {}x{}, expected {n}x{d}",
                s.num_nodes(),
                s.feature_dim()
            );
        }
        Ok(Self {
            snapshots,
            feature_dim: d,
        })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.snapshots[0].num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn snapshot(&self, t: usize) -> &Snapshot<T> {
        &self.snapshots[t]
    }

    pub fn snapshots(&self) -> &[Snapshot<T>] {
        &self.snapshots
    }

    pub fn cast<U: Scalar>(&self) -> DynamicGraph<U> {
        DynamicGraph {
            snapshots: self.snapshots.iter().map(Snapshot::cast).collect(),
            feature_dim: self.feature_dim,
        }
    }
}
