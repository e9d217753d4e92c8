use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::embed::series_moments;
use super::EdgeScore;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::WeightedDigraph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrangerConfig {
    pub lags: usize,
    pub alpha: f64,
    /// Correct for the `N(N-1)` pairwise tests.
    pub bonferroni: bool,
}

impl Default for GrangerConfig {
    fn default() -> Self {
        Self {
            lags: 5,
            alpha: 0.05,
            bonferroni: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrangerTest {
    pub f_stat: f64,
    pub p_value: f64,
}

/// Residual sum of squares of the least-squares fit of `y` on `x`, or
/// `None` if `x` is numerically rank deficient.
fn rss(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<f64> {
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..r.ncols()).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..r.ncols()).any(|i| r[(i, i)].abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE)) {
        return None;
    }
    let qty = qr.q().transpose() * y;
    let beta = r.solve_upper_triangular(&qty)?;
    let resid = y - x * beta;
    Some(resid.norm_squared())
}

/// Bivariate F-test of `source -> target` over series pooled from
/// `pairs` of (source, target) sample vectors with `p` lags.
pub fn granger_test(pairs: &[(&[f64], &[f64])], p: usize, src: usize, dst: usize) -> Result<GrangerTest> {
    let rows: usize = pairs.iter().map(|(x, _)| x.len().saturating_sub(p)).sum();
    let full_cols = 2 * p + 1;
    if p == 0 || rows <= full_cols + 1 {
        return Err(Error::InsufficientData(format!(
            "{rows} rows for a {p}-lag Granger test"
        )));
    }
    let mut null = DMatrix::zeros(rows, p + 1);
    let mut full = DMatrix::zeros(rows, full_cols);
    let mut y = DVector::zeros(rows);
    let mut r = 0;
    for (xs, ys) in pairs {
        for t in p..xs.len() {
            y[r] = ys[t];
            null[(r, 0)] = 1.0;
            full[(r, 0)] = 1.0;
            for l in 1..=p {
                null[(r, l)] = ys[t - l];
                full[(r, l)] = ys[t - l];
                full[(r, p + l)] = xs[t - l];
            }
            r += 1;
        }
    }
    let collinear = || Error::Collinear { src, dst };
    let rss0 = rss(&null, &y).ok_or_else(collinear)?;
    let rss1 = rss(&full, &y).ok_or_else(collinear)?;
    let df2 = (rows - full_cols) as f64;
    if rss1 <= 0.0 {
        return Err(collinear());
    }
    let f_stat = ((rss0 - rss1) / p as f64) / (rss1 / df2);
    let dist = FisherSnedecor::new(p as f64, df2)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p_value = if f_stat.is_finite() && f_stat > 0.0 {
        1.0 - dist.cdf(f_stat)
    } else {
        1.0
    };
    Ok(GrangerTest { f_stat, p_value })
}

/// Pairwise Granger graph; every tested pair is returned in the score table.
pub fn granger_graph_scored(dataset: &Dataset, cfg: &GrangerConfig) -> Result<(WeightedDigraph, Vec<EdgeScore>)> {
    let n = dataset.n_vertices();
    let p = cfg.lags;
    let shortest = dataset.series.iter().map(|s| s.len()).min().unwrap_or(0);
    if shortest <= 3 * p + 2 {
        return Err(Error::InsufficientData(format!(
            "series of length {shortest} too short for {p} lags"
        )));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Config(format!("alpha = {}", cfg.alpha)));
    }
    let columns: Vec<Vec<Vec<f64>>> = dataset
        .series
        .iter()
        .map(|s| {
            let (mean, sd) = series_moments(s);
            (0..n)
                .map(|v| s.column(v).iter().map(|x| (x - mean[v]) / sd[v]).collect())
                .collect()
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|s| (0..n).filter(move |&d| d != s).map(move |d| (s, d)))
        .collect();
    let tests: Vec<GrangerTest> = pairs
        .par_iter()
        .map(|&(s, d)| {
            let data: Vec<(&[f64], &[f64])> = columns
                .iter()
                .map(|c| (c[s].as_slice(), c[d].as_slice()))
                .collect();
            granger_test(&data, p, s, d)
        })
        .collect::<Result<_>>()?;
    let level = if cfg.bonferroni {
        cfg.alpha / pairs.len().max(1) as f64
    } else {
        cfg.alpha
    };
    let mut graph = WeightedDigraph::empty(n);
    let mut scores = Vec::with_capacity(pairs.len());
    for (&(s, d), t) in pairs.iter().zip(&tests) {
        let selected = t.p_value < level;
        if selected {
            graph.add_edge(s, d, t.f_stat.max(f64::MIN_POSITIVE))?;
        }
        scores.push(EdgeScore {
            src: s,
            dst: d,
            score: t.f_stat,
            p_value: Some(t.p_value),
            selected,
        });
    }
    Ok((graph, scores))
}

pub fn granger_graph(dataset: &Dataset, cfg: &GrangerConfig) -> Result<WeightedDigraph> {
    Ok(granger_graph_scored(dataset, cfg)?.0)
}
