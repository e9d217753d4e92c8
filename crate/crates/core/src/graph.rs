//! Directed graph types, attention-to-graph extraction and the graph edit
//! distance used by every evaluation in the crate.
//!
//! Attention matrices are stored target-major: entry `(i, j)` is the weight
//! vertex `i` places on vertex `j`, which corresponds to the directed edge
//! `j -> i` (the signal of `j` drives `i`). Every conversion between
//! attention matrices and [`WeightedDigraph`]s goes through
//! [`attention_to_digraph`] or [`PriorGraph::attention_adjacency`] so the
//! orientation is fixed in one place.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::to_json_string;

/// Default binarization threshold on row-normalized attention.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// Static weighted directed graph on vertices `0..n`.
///
/// Holds at most one edge per ordered pair and only strictly positive weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDigraph {
    n: usize,
    edges: BTreeMap<(usize, usize), f64>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    n: usize,
    edges: Vec<Edge>,
}

impl WeightedDigraph {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            edges: BTreeMap::new(),
        }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut g = Self::empty(n);
        for e in edges {
            if g.edges.contains_key(&(e.src, e.dst)) {
                return Err(Error::Validation(format!(
                    "duplicate edge {} -> {}",
                    e.src, e.dst
                )));
            }
            g.add_edge(e.src, e.dst, e.weight)?;
        }
        Ok(g)
    }

    /// Builds a graph with unit weights from `(src, dst)` pairs.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::from_edges(
            n,
            pairs.iter().map(|&(src, dst)| Edge {
                src,
                dst,
                weight: 1.0,
            }),
        )
    }

    /// Inserts or overwrites the edge `src -> dst`.
    pub fn add_edge(&mut self, src: usize, dst: usize, weight: f64) -> Result<()> {
        if src >= self.n || dst >= self.n {
            return Err(Error::Validation(format!(
                "edge {src} -> {dst} out of range for n = {}",
                self.n
            )));
        }
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::Validation(format!(
                "edge {src} -> {dst} has non-positive weight {weight}"
            )));
        }
        self.edges.insert((src, dst), weight);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.edges.contains_key(&(src, dst))
    }

    pub fn weight(&self, src: usize, dst: usize) -> Option<f64> {
        self.edges.get(&(src, dst)).copied()
    }

    /// Edges in `(src, dst)` order.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges
            .iter()
            .map(|(&(src, dst), &weight)| Edge { src, dst, weight })
    }

    /// Ordered pairs of the non-self-loop edges.
    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges
            .keys()
            .copied()
            .filter(|(s, d)| s != d)
            .collect()
    }

    pub fn without_self_loops(&self) -> Self {
        Self {
            n: self.n,
            edges: self
                .edges
                .iter()
                .filter(|((s, d), _)| s != d)
                .map(|(&k, &w)| (k, w))
                .collect(),
        }
    }

    /// Dense adjacency with `a[(src, dst)] = weight`.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for (&(s, d), &w) in &self.edges {
            a[(s, d)] = w;
        }
        a
    }

    pub fn to_json(&self) -> String {
        to_json_string(&self.to_json_value()).expect("graph serializes")
    }

    fn to_json_value(&self) -> GraphJson {
        GraphJson {
            n: self.n,
            edges: self.edges().collect(),
        }
    }

    fn from_json_value(v: GraphJson) -> Result<Self> {
        Self::from_edges(v.n, v.edges)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_json_value(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })
    }
}

impl Serialize for WeightedDigraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for WeightedDigraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = GraphJson::deserialize(d)?;
        Self::from_json_value(v).map_err(serde::de::Error::custom)
    }
}

/// Candidate graph used to regularize inference, plus the set of ordered
/// pairs allowed to carry attention.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorGraph {
    digraph: WeightedDigraph,
    support: BTreeSet<(usize, usize)>,
}

impl PriorGraph {
    /// Support = prior edges plus every self-loop.
    pub fn new(digraph: WeightedDigraph) -> Self {
        let mut support: BTreeSet<_> = digraph.edges.keys().copied().collect();
        support.extend((0..digraph.n).map(|i| (i, i)));
        Self { digraph, support }
    }

    /// Support = every ordered pair; the prior only enters through the
    /// Frobenius penalty.
    pub fn dense(digraph: WeightedDigraph) -> Self {
        let n = digraph.n;
        let support = (0..n).flat_map(|s| (0..n).map(move |d| (s, d))).collect();
        Self { digraph, support }
    }

    /// Prior with explicit support. Self-loops and prior edges are always added.
    pub fn with_support(
        digraph: WeightedDigraph,
        extra: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut p = Self::new(digraph);
        for (s, d) in extra {
            if s >= p.n() || d >= p.n() {
                return Err(Error::Validation(format!("support pair {s} -> {d} out of range")));
            }
            p.support.insert((s, d));
        }
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.digraph.n
    }

    pub fn digraph(&self) -> &WeightedDigraph {
        &self.digraph
    }

    pub fn support(&self) -> &BTreeSet<(usize, usize)> {
        &self.support
    }

    /// Whether vertex `target` may attend to vertex `source`.
    pub fn allows(&self, source: usize, target: usize) -> bool {
        self.support.contains(&(source, target))
    }

    /// Target-major boolean mask, `mask[i * n + j]` iff `i` may attend to `j`.
    pub fn attention_mask(&self) -> Vec<bool> {
        let n = self.n();
        let mut mask = vec![false; n * n];
        for &(s, d) in &self.support {
            mask[d * n + s] = true;
        }
        mask
    }

    /// Dense prior adjacency in attention orientation: entry `(i, j)` is the
    /// prior weight of `j -> i`.
    pub fn attention_adjacency(&self) -> DMatrix<f64> {
        self.digraph.adjacency().transpose()
    }
}

/// Attention matrices over an ascending time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<DMatrix<f64>>,
}

impl AttentionTrajectory {
    pub fn new(times: Vec<f64>, snapshots: Vec<DMatrix<f64>>) -> Result<Self> {
        if times.len() != snapshots.len() {
            return Err(Error::SizeMismatch(format!(
                "{} times but {} snapshots",
                times.len(),
                snapshots.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("attention times must ascend".into()));
        }
        if let Some(first) = snapshots.first() {
            let n = first.nrows();
            if snapshots.iter().any(|s| s.nrows() != n || s.ncols() != n) {
                return Err(Error::SizeMismatch("snapshots differ in shape".into()));
            }
        }
        Ok(Self { times, snapshots })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Elementwise mean over snapshots. The running update is exact when
    /// every snapshot is the same.
    pub fn mean_matrix(&self) -> Result<DMatrix<f64>> {
        let first = self
            .snapshots
            .first()
            .ok_or_else(|| Error::EmptyInput("attention trajectory has no snapshots".into()))?;
        let mut mean = first.clone();
        for (k, s) in self.snapshots.iter().enumerate().skip(1) {
            mean += (s - &mean) / (k + 1) as f64;
        }
        Ok(mean)
    }

    /// Unthresholded dynamic graph.
    pub fn to_dynamic_graph(&self) -> DynamicGraph {
        DynamicGraph {
            times: self.times.clone(),
            snapshots: self.snapshots.iter().map(attention_to_digraph).collect(),
        }
    }
}

/// A time-indexed sequence of graphs as written to `dynamic_graph.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicGraph {
    pub times: Vec<f64>,
    pub snapshots: Vec<WeightedDigraph>,
}

impl DynamicGraph {
    pub fn to_json(&self) -> String {
        to_json_string(self).expect("dynamic graph serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Converts a target-major attention matrix into edges `j -> i` weighted by
/// `a[(i, j)]`. Zero entries are not edges.
pub fn attention_to_digraph(attention: &DMatrix<f64>) -> WeightedDigraph {
    let n = attention.nrows();
    let mut g = WeightedDigraph::empty(n);
    for i in 0..n {
        for j in 0..attention.ncols() {
            let w = attention[(i, j)];
            if w > 0.0 && w.is_finite() {
                g.edges.insert((j, i), w);
            }
        }
    }
    g
}

/// Number of directed-edge insertions plus deletions turning `pred` into
/// `truth`, with fixed vertex labels. Weights and self-loops are ignored.
pub fn graph_edit_distance(pred: &WeightedDigraph, truth: &WeightedDigraph) -> Result<usize> {
    if pred.n != truth.n {
        return Err(Error::SizeMismatch(format!(
            "predicted graph has {} vertices, truth has {}",
            pred.n, truth.n
        )));
    }
    let a = pred.edge_set();
    let b = truth.edge_set();
    Ok(a.symmetric_difference(&b).count())
}

/// Keeps edges with weight strictly above `threshold`, dropping self-loops.
pub fn binarize(weighted: &WeightedDigraph, threshold: f64) -> Result<WeightedDigraph> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be nonnegative, got {threshold}"
        )));
    }
    Ok(WeightedDigraph {
        n: weighted.n,
        edges: weighted
            .edges
            .iter()
            .filter(|(&(s, d), &w)| s != d && w > threshold)
            .map(|(&k, &w)| (k, w))
            .collect(),
    })
}

/// [`binarize`] applied to an attention snapshot.
pub fn binarize_attention(attention: &DMatrix<f64>, threshold: f64) -> Result<WeightedDigraph> {
    binarize(&attention_to_digraph(attention), threshold)
}

/// Static graph whose weights are the mean attention over all snapshots.
pub fn time_average(traj: &AttentionTrajectory) -> Result<WeightedDigraph> {
    Ok(attention_to_digraph(&traj.mean_matrix()?))
}

/// Frobenius distance between an attention snapshot and the prior adjacency.
pub fn prior_deviation(snapshot: &DMatrix<f64>, prior: &PriorGraph) -> Result<f64> {
    let n = prior.n();
    if snapshot.nrows() != n || snapshot.ncols() != n {
        return Err(Error::SizeMismatch(format!(
            "snapshot is {}x{}, prior has {n} vertices",
            snapshot.nrows(),
            snapshot.ncols()
        )));
    }
    Ok((snapshot - prior.attention_adjacency()).norm())
}

/// Edge precision and recall of `pred` against `truth`, self-loops excluded.
/// Precision of an empty prediction is reported as 0.
pub fn precision_recall(pred: &WeightedDigraph, truth: &WeightedDigraph) -> Result<(f64, f64)> {
    if pred.n != truth.n {
        return Err(Error::SizeMismatch(format!(
            "predicted graph has {} vertices, truth has {}",
            pred.n, truth.n
        )));
    }
    let a = pred.edge_set();
    let b = truth.edge_set();
    let hits = a.intersection(&b).count() as f64;
    let precision = if a.is_empty() { 0.0 } else { hits / a.len() as f64 };
    let recall = if b.is_empty() { 1.0 } else { hits / b.len() as f64 };
    Ok((precision, recall))
}
