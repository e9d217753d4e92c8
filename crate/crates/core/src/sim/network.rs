use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng_stream;
use crate::error::{Error, Result};
use crate::graph::WeightedDigraph;

/// Directed graph with excitatory/inhibitory vertex labels. Edge weights are
/// magnitudes; the sign of an outgoing edge follows its source's label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledNetwork {
    pub graph: WeightedDigraph,
    pub excitatory: Vec<bool>,
}

impl LabeledNetwork {
    pub fn new(graph: WeightedDigraph, excitatory: Vec<bool>) -> Result<Self> {
        if excitatory.len() != graph.n() {
            return Err(Error::SizeMismatch(format!(
                "{} labels for {} vertices",
                excitatory.len(),
                graph.n()
            )));
        }
        Ok(Self { graph, excitatory })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn signed_weight(&self, src: usize, dst: usize) -> f64 {
        let w = self.graph.weight(src, dst).unwrap_or(0.0);
        if self.excitatory[src] {
            w
        } else {
            -w
        }
    }

    /// Incoming signed edges per target: `inputs[dst] = [(src, w), ..]`.
    pub fn signed_inputs(&self) -> Vec<Vec<(usize, f64)>> {
        let mut inputs = vec![Vec::new(); self.n()];
        for e in self.graph.edges() {
            inputs[e.dst].push((e.src, self.signed_weight(e.src, e.dst)));
        }
        inputs
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n()];
        for e in self.graph.edges() {
            out[e.src].push(e.dst);
        }
        out
    }

    /// Vertices reachable from `v` (including `v`).
    pub fn descendants(&self, v: usize) -> Vec<bool> {
        let children = self.children();
        let mut seen = vec![false; self.n()];
        let mut stack = vec![v];
        seen[v] = true;
        while let Some(u) = stack.pop() {
            for &c in &children[u] {
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        seen
    }
}

/// Directed Erdos-Renyi graph without self-loops. The first
/// `ceil(fraction_excitatory * n)` vertices are excitatory.
pub fn random_network(
    n: usize,
    edge_probability: f64,
    fraction_excitatory: f64,
    seed: u64,
) -> Result<LabeledNetwork> {
    if !(0.0..=1.0).contains(&edge_probability) {
        return Err(Error::InvalidArgument(format!(
            "edge probability {edge_probability} outside [0, 1]"
        )));
    }
    if !(0.0..=1.0).contains(&fraction_excitatory) {
        return Err(Error::InvalidArgument(format!(
            "excitatory fraction {fraction_excitatory} outside [0, 1]"
        )));
    }
    let mut rng = rng_stream(seed, 0);
    let mut graph = WeightedDigraph::empty(n);
    for src in 0..n {
        for dst in 0..n {
            if src != dst && rng.random::<f64>() < edge_probability {
                graph.add_edge(src, dst, 1.0)?;
            }
        }
    }
    let n_exc = ((fraction_excitatory * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let excitatory = (0..n).map(|i| i < n_exc).collect();
    LabeledNetwork::new(graph, excitatory)
}
