use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embed::LagEmbedding;
use super::entropy::{EntropyEstimatorConfig, Samples, Shift};
use super::significance::{permutation_significance, SignificanceConfig};
use super::EdgeScore;
use crate::data::Dataset;
use crate::error::Result;
use crate::graph::WeightedDigraph;

/// Shared settings for the information-theoretic methods.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfoConfig {
    /// Past values per vertex in the conditioning sets.
    pub lags: usize,
    pub estimator: EntropyEstimatorConfig,
    pub significance: SignificanceConfig,
}

impl Default for InfoConfig {
    fn default() -> Self {
        Self {
            lags: 1,
            estimator: EntropyEstimatorConfig::default(),
            significance: SignificanceConfig::default(),
        }
    }
}

struct Ctx<'a> {
    emb: &'a LagEmbedding,
    samples: &'a Samples,
    cfg: &'a InfoConfig,
}

impl Ctx<'_> {
    fn h(&self, target: usize, cond: &[usize], shift: Option<Shift>) -> Result<f64> {
        self.samples
            .conditional_entropy(&self.cfg.estimator, &[self.emb.next(target)], cond, shift)
    }

    fn test(&self, observed: f64, stream: u64, null: impl FnMut(usize) -> Result<f64>) -> Result<(bool, f64)> {
        permutation_significance(observed, self.samples.m(), &self.cfg.significance, stream, null)
    }
}

fn stream(target: usize, round: usize, phase: u64) -> u64 {
    ((target as u64) << 32) | ((round as u64) << 2) | phase
}

/// First index of the maximum (ties resolved towards the lowest index).
fn argmax(values: &[(usize, f64)]) -> Option<(usize, f64)> {
    values
        .iter()
        .copied()
        .fold(None, |best, (j, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((j, v)),
        })
}

fn positive(w: f64) -> f64 {
    if w > 0.0 {
        w
    } else {
        f64::MIN_POSITIVE
    }
}

fn assemble(n: usize, per_target: Vec<Vec<EdgeScore>>) -> Result<(WeightedDigraph, Vec<EdgeScore>)> {
    let mut graph = WeightedDigraph::empty(n);
    let mut scores = Vec::new();
    for list in per_target {
        for s in list {
            if s.selected && s.src != s.dst {
                graph.add_edge(s.src, s.dst, positive(s.score))?;
            }
            scores.push(s);
        }
    }
    Ok((graph, scores))
}

fn run<F>(dataset: &Dataset, cfg: &InfoConfig, per_target: F) -> Result<(WeightedDigraph, Vec<EdgeScore>)>
where
    F: Fn(&Ctx, usize) -> Result<Vec<EdgeScore>> + Sync,
{
    cfg.estimator.validate()?;
    cfg.significance.validate()?;
    let emb = LagEmbedding::new(dataset, cfg.lags)?;
    let samples = Samples::new(emb.data.clone());
    let ctx = Ctx {
        emb: &emb,
        samples: &samples,
        cfg,
    };
    let n = emb.n;
    let results: Vec<Vec<EdgeScore>> = (0..n)
        .into_par_iter()
        .map(|t| per_target(&ctx, t))
        .collect::<Result<_>>()?;
    assemble(n, results)
}

/// Causation-entropy parent discovery: greedy aggregation followed by
/// divisive pruning, both gated by permutation tests. Candidates include
/// the target itself; self-loops are dropped from the graph.
pub fn oce_graph_scored(dataset: &Dataset, cfg: &InfoConfig) -> Result<(WeightedDigraph, Vec<EdgeScore>)> {
    run(dataset, cfg, |ctx, target| {
        let n = ctx.emb.n;
        let mut parents: Vec<usize> = Vec::new();
        for round in 0.. {
            let cond = ctx.emb.past_of(&parents);
            let base = ctx.h(target, &cond, None)?;
            let mut gains = Vec::new();
            for j in (0..n).filter(|j| !parents.contains(j)) {
                let mut c = cond.clone();
                c.extend(ctx.emb.past(j));
                gains.push((j, base - ctx.h(target, &c, None)?));
            }
            let Some((best, gain)) = argmax(&gains) else { break };
            let block = ctx.emb.past(best);
            let mut with = cond.clone();
            with.extend(&block);
            let (sig, _) = ctx.test(gain, stream(target, round, 0), |by| {
                Ok(base - ctx.h(target, &with, Some(Shift { cols: &block, by }))?)
            })?;
            if !sig {
                break;
            }
            parents.push(best);
        }

        let mut idx = 0;
        let mut round = 0;
        while idx < parents.len() {
            let j = parents[idx];
            let rest: Vec<usize> = parents.iter().copied().filter(|&k| k != j).collect();
            let cond_rest = ctx.emb.past_of(&rest);
            let all = ctx.emb.past_of(&parents);
            let block = ctx.emb.past(j);
            let base = ctx.h(target, &cond_rest, None)?;
            let gain = base - ctx.h(target, &all, None)?;
            let (sig, _) = ctx.test(gain, stream(target, round, 1), |by| {
                Ok(base - ctx.h(target, &all, Some(Shift { cols: &block, by }))?)
            })?;
            round += 1;
            if sig {
                idx += 1;
            } else {
                parents.remove(idx);
            }
        }

        let all = ctx.emb.past_of(&parents);
        let full = ctx.h(target, &all, None)?;
        parents
            .iter()
            .map(|&j| {
                let rest: Vec<usize> = parents.iter().copied().filter(|&k| k != j).collect();
                let c = ctx.h(target, &ctx.emb.past_of(&rest), None)? - full;
                Ok(EdgeScore {
                    src: j,
                    dst: target,
                    score: c,
                    p_value: None,
                    selected: true,
                })
            })
            .collect()
    })
}

/// Multivariate transfer entropy: greedy source selection conditioned on
/// the target's own past and the sources already admitted.
pub fn mte_graph_scored(dataset: &Dataset, cfg: &InfoConfig) -> Result<(WeightedDigraph, Vec<EdgeScore>)> {
    run(dataset, cfg, |ctx, target| {
        let n = ctx.emb.n;
        let mut sources: Vec<usize> = Vec::new();
        let mut out = Vec::new();
        for round in 0.. {
            let mut cond = ctx.emb.past(target);
            cond.extend(ctx.emb.past_of(&sources));
            let base = ctx.h(target, &cond, None)?;
            let mut gains = Vec::new();
            for i in (0..n).filter(|&i| i != target && !sources.contains(&i)) {
                let mut c = cond.clone();
                c.extend(ctx.emb.past(i));
                gains.push((i, base - ctx.h(target, &c, None)?));
            }
            let Some((best, te)) = argmax(&gains) else { break };
            let block = ctx.emb.past(best);
            let mut with = cond.clone();
            with.extend(&block);
            let (sig, p) = ctx.test(te, stream(target, round, 2), |by| {
                Ok(base - ctx.h(target, &with, Some(Shift { cols: &block, by }))?)
            })?;
            out.push(EdgeScore {
                src: best,
                dst: target,
                score: te,
                p_value: Some(p),
                selected: sig,
            });
            if !sig {
                break;
            }
            sources.push(best);
        }
        Ok(out)
    })
}

/// Normalized multivariate mutual-information score
/// `C_{K->i} = 1 - h(i' | all) / h(i' | all without K)`, grown greedily
/// over candidate parents with a permutation-calibrated admission rule.
pub fn mmi_graph_scored(dataset: &Dataset, cfg: &InfoConfig) -> Result<(WeightedDigraph, Vec<EdgeScore>)> {
    run(dataset, cfg, |ctx, target| {
        let n = ctx.emb.n;
        let everyone: Vec<usize> = (0..n).collect();
        let all = ctx.emb.past_of(&everyone);
        let num = ctx.h(target, &all, None)?;
        let without = |excluded: &[usize]| -> Vec<usize> {
            let keep: Vec<usize> = everyone.iter().copied().filter(|v| !excluded.contains(v)).collect();
            ctx.emb.past_of(&keep)
        };
        let mut pairwise = vec![None; n];
        for j in (0..n).filter(|&j| j != target) {
            let d = ctx.h(target, &without(&[j]), None)?;
            if d > 0.0 {
                pairwise[j] = Some(1.0 - num / d);
            }
        }
        let mut parents: Vec<usize> = Vec::new();
        let mut out = Vec::new();
        for round in 0.. {
            let mut scored = Vec::new();
            let mut denoms = vec![0.0; n];
            for j in (0..n).filter(|&j| j != target && !parents.contains(&j)) {
                let mut k = parents.clone();
                k.push(j);
                let d = ctx.h(target, &without(&k), None)?;
                if d <= 0.0 {
                    warn!("mMI: skipping {j}->{target}, conditional entropy {d} is not positive");
                    continue;
                }
                denoms[j] = d;
                scored.push((j, 1.0 - num / d));
            }
            let Some((best, c)) = argmax(&scored) else { break };
            let block = ctx.emb.past(best);
            let d = denoms[best];
            let (sig, p) = ctx.test(c, stream(target, round, 3), |by| {
                let shifted = ctx.h(target, &all, Some(Shift { cols: &block, by }))?;
                Ok(1.0 - shifted / d)
            })?;
            out.push(EdgeScore {
                src: best,
                dst: target,
                score: pairwise[best].unwrap_or(c),
                p_value: Some(p),
                selected: sig,
            });
            if !sig {
                break;
            }
            parents.push(best);
        }
        Ok(out)
    })
}
