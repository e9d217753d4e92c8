use nalgebra::DMatrix;

use super::train::TrainedModel;
use crate::data::{apply_perturbation, MultivariateTimeSeries, PerturbationRecord};
use crate::error::{Error, Result};
use crate::graph::{binarize, binarize_attention, time_average, DynamicGraph, WeightedDigraph};

/// Thresholded outputs of a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractedGraphs {
    /// One binarized graph per training interval.
    pub dynamic: DynamicGraph,
    /// Time-averaged attention, binarized.
    pub static_graph: WeightedDigraph,
    /// Time-averaged attention before thresholding.
    pub mean_attention: WeightedDigraph,
}

/// Variance of the lag index under the distribution `weights` over lags
/// `0, 1, .., L-1`.
pub fn hysteresis_index(weights: &[f64]) -> f64 {
    let mean: f64 = weights.iter().enumerate().map(|(k, w)| k as f64 * w).sum();
    weights
        .iter()
        .enumerate()
        .map(|(k, w)| w * (k as f64 - mean).powi(2))
        .sum()
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Degenerate(
            "correlation undefined: one side is constant".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

impl TrainedModel {
    pub fn hysteresis_index(&self) -> f64 {
        hysteresis_index(&self.params.lag_weights())
    }

    /// Time-averaged attention in attention orientation (`(i, j)` weighs
    /// `j -> i`).
    pub fn mean_attention(&self) -> Result<DMatrix<f64>> {
        self.attention.mean_matrix()
    }

    /// Keeps edges whose attention exceeds `threshold`; self-loops are
    /// dropped.
    pub fn extract_graphs(&self, threshold: f64) -> Result<ExtractedGraphs> {
        let snapshots = self
            .attention
            .snapshots
            .iter()
            .map(|a| binarize_attention(a, threshold))
            .collect::<Result<Vec<_>>>()?;
        let mean_attention = time_average(&self.attention)?;
        Ok(ExtractedGraphs {
            dynamic: DynamicGraph {
                times: self.attention.times.clone(),
                snapshots,
            },
            static_graph: binarize(&mean_attention, threshold)?,
            mean_attention,
        })
    }

    /// Finite-difference check of how a perturbation at `vertex` spreads.
    ///
    /// Adds `epsilon` to `vertex` at the middle sample of `series`, predicts
    /// the following `L` samples with and without it, and sums the absolute
    /// prediction change per vertex. Returns the Pearson correlation, over
    /// the supported out-neighbours `j` of `vertex`, between that change and
    /// the time-averaged attention `α_j,vertex`.
    pub fn sensitivity_check(
        &self,
        series: &MultivariateTimeSeries,
        vertex: usize,
        epsilon: f64,
    ) -> Result<f64> {
        let n = self.n_vertices();
        if vertex >= n {
            return Err(Error::InvalidArgument(format!("vertex {vertex} out of range")));
        }
        let neighbours: Vec<usize> = (0..n)
            .filter(|&j| j != vertex && self.support[j * n + vertex])
            .collect();
        if neighbours.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "vertex {vertex} has {} supported out-neighbours, need 3",
                neighbours.len()
            )));
        }
        let lags = self.params.lags();
        if series.len() < 2 * (lags + 1) {
            return Err(Error::InsufficientData(format!(
                "series of length {} too short",
                series.len()
            )));
        }
        let kp = series.len() / 2;
        let tp = series.times()[kp];
        let perturbed = apply_perturbation(series, &PerturbationRecord::additive(vertex, tp, epsilon))?;
        let queries: Vec<f64> = series.times()[kp + 1..=(kp + lags).min(series.len() - 1)].to_vec();
        let base = self.predict(series, None, &queries)?;
        let pert = self.predict(&perturbed, None, &queries)?;
        let change = (pert - base).map(f64::abs);
        let mean = self.mean_attention()?;
        let s: Vec<f64> = neighbours.iter().map(|&j| change.column(j).sum()).collect();
        let a: Vec<f64> = neighbours.iter().map(|&j| mean[(j, vertex)]).collect();
        pearson(&s, &a)
    }
}
