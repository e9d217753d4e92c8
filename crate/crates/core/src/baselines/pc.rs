use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::embed::pooled_samples;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::WeightedDigraph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcConfig {
    pub alpha: f64,
    pub d_max: usize,
}

impl Default for PcConfig {
    fn default() -> Self {
        Self { alpha: 0.05, d_max: 3 }
    }
}

/// Partially directed graph from the PC algorithm.
#[derive(Clone, Debug, PartialEq)]
pub struct PcGraph {
    n: usize,
    adjacent: Vec<Vec<bool>>,
    /// `arrow[i][j]`: the edge between `i` and `j` is oriented `i -> j`.
    arrow: Vec<Vec<bool>>,
    sepsets: BTreeMap<(usize, usize), Vec<usize>>,
    strength: DMatrix<f64>,
}

impl PcGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacent[i][j]
    }

    pub fn oriented(&self, i: usize, j: usize) -> bool {
        self.adjacent[i][j] && self.arrow[i][j]
    }

    pub fn undirected(&self, i: usize, j: usize) -> bool {
        self.adjacent[i][j] && !self.arrow[i][j] && !self.arrow[j][i]
    }

    pub fn sepset(&self, i: usize, j: usize) -> Option<&[usize]> {
        self.sepsets.get(&(i.min(j), i.max(j))).map(Vec::as_slice)
    }

    fn reaches(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![from];
        while let Some(u) = stack.pop() {
            if u == to {
                return true;
            }
            if std::mem::replace(&mut seen[u], true) {
                continue;
            }
            stack.extend((0..self.n).filter(|&v| self.oriented(u, v)));
        }
        false
    }

    pub fn has_directed_cycle(&self) -> bool {
        (0..self.n).any(|i| (0..self.n).any(|j| self.oriented(i, j) && self.reaches(j, i)))
    }

    /// Orients an undirected `i - j` as `i -> j` unless that would close a
    /// directed cycle.
    fn orient(&mut self, i: usize, j: usize) -> bool {
        if !self.undirected(i, j) || self.reaches(j, i) {
            return false;
        }
        self.arrow[i][j] = true;
        debug_assert!(!self.has_directed_cycle());
        true
    }

    /// Directed edges as-is, undirected edges as both directions.
    pub fn to_digraph(&self) -> WeightedDigraph {
        let mut g = WeightedDigraph::empty(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                if self.adjacent[i][j] && !self.arrow[j][i] {
                    let w = self.strength[(i, j)].abs().max(f64::MIN_POSITIVE);
                    g.add_edge(i, j, w).expect("valid pair");
                }
            }
        }
        g
    }
}

fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::new(), &mut out);
    out
}

/// Partial correlation of `i` and `j` given `s` from a correlation matrix.
pub fn partial_correlation(corr: &DMatrix<f64>, i: usize, j: usize, s: &[usize]) -> Result<f64> {
    let idx: Vec<usize> = [i, j].iter().chain(s).copied().collect();
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| corr[(idx[a], idx[b])]);
    let prec = sub
        .try_inverse()
        .ok_or_else(|| Error::Degenerate(format!("singular correlation block for ({i}, {j} | {s:?})")))?;
    let denom = (prec[(0, 0)] * prec[(1, 1)]).sqrt();
    if !(denom > 0.0) {
        return Err(Error::Degenerate("non-positive partial variance".into()));
    }
    Ok((-prec[(0, 1)] / denom).clamp(-1.0, 1.0))
}

/// Two-sided Fisher-z p-value for a partial correlation.
pub fn fisher_z_pvalue(r: f64, m: usize, cond: usize) -> f64 {
    let dof = m as f64 - cond as f64 - 3.0;
    if dof <= 0.0 {
        return 1.0;
    }
    let r = r.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
    let z = r.atanh() * dof.sqrt();
    let normal = Normal::standard();
    2.0 * (1.0 - normal.cdf(z.abs()))
}

/// PC on contemporaneous samples: Fisher-z skeleton search over
/// conditioning sets up to `d_max`, then v-structures and three
/// propagation rules iterated to a fixed point.
pub fn pc_analyze_samples(samples: &DMatrix<f64>, cfg: &PcConfig) -> Result<PcGraph> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Config(format!("alpha = {}", cfg.alpha)));
    }
    let (m, n) = (samples.nrows(), samples.ncols());
    if m < 5 {
        return Err(Error::InsufficientData(format!("{m} samples")));
    }
    let mut centered = samples.clone();
    for mut c in centered.column_iter_mut() {
        let mu = c.mean();
        c.add_scalar_mut(-mu);
    }
    let cov = centered.transpose() * &centered / (m as f64 - 1.0);
    let sd: Vec<f64> = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
    if let Some(i) = sd.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Degenerate(format!("vertex {i} has zero variance")));
    }
    let corr = DMatrix::from_fn(n, n, |i, j| cov[(i, j)] / (sd[i] * sd[j]));

    let mut g = PcGraph {
        n,
        adjacent: (0..n).map(|i| (0..n).map(|j| i != j).collect()).collect(),
        arrow: vec![vec![false; n]; n],
        sepsets: BTreeMap::new(),
        strength: corr.clone(),
    };

    for d in 0..=cfg.d_max {
        let snapshot = g.adjacent.clone();
        let mut any = false;
        for i in 0..n {
            for j in 0..n {
                if i == j || !g.adjacent[i][j] {
                    continue;
                }
                let others: Vec<usize> = (0..n).filter(|&k| k != j && snapshot[i][k]).collect();
                if others.len() < d {
                    continue;
                }
                any = true;
                for s in subsets(&others, d) {
                    let r = partial_correlation(&corr, i, j, &s)?;
                    if fisher_z_pvalue(r, m, d) > cfg.alpha {
                        g.adjacent[i][j] = false;
                        g.adjacent[j][i] = false;
                        g.sepsets.insert((i.min(j), i.max(j)), s);
                        break;
                    }
                }
            }
        }
        if !any {
            break;
        }
    }

    // v-structures
    for j in 0..n {
        for i in 0..n {
            for k in (i + 1)..n {
                if i == j || k == j || !g.adjacent[i][j] || !g.adjacent[k][j] || g.adjacent[i][k] {
                    continue;
                }
                let in_sep = g.sepset(i, k).is_some_and(|s| s.contains(&j));
                if !in_sep {
                    g.orient(i, j);
                    g.orient(k, j);
                }
            }
        }
    }

    loop {
        let mut changed = false;
        for a in 0..n {
            for b in 0..n {
                if !g.undirected(a, b) {
                    continue;
                }
                // a -> b if some c -> a with c, b non-adjacent.
                let r1 = (0..n).any(|c| c != b && g.oriented(c, a) && !g.adjacent[c][b]);
                // a -> b if a -> c -> b.
                let r2 = (0..n).any(|c| g.oriented(a, c) && g.oriented(c, b));
                // a -> b if a - c1 -> b and a - c2 -> b with c1, c2 non-adjacent.
                let kids: Vec<usize> = (0..n)
                    .filter(|&c| g.undirected(a, c) && g.oriented(c, b))
                    .collect();
                let r3 = kids
                    .iter()
                    .enumerate()
                    .any(|(x, &c1)| kids[x + 1..].iter().any(|&c2| !g.adjacent[c1][c2]));
                if (r1 || r2 || r3) && g.orient(a, b) {
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(g)
}

pub fn pc_analyze(dataset: &Dataset, cfg: &PcConfig) -> Result<PcGraph> {
    pc_analyze_samples(&pooled_samples(dataset), cfg)
}

pub fn pc_graph(dataset: &Dataset, cfg: &PcConfig) -> Result<WeightedDigraph> {
    Ok(pc_analyze(dataset, cfg)?.to_digraph())
}
