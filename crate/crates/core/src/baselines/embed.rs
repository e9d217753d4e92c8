use nalgebra::DMatrix;

use crate::data::{Dataset, MultivariateTimeSeries};
use crate::error::{Error, Result};

/// Per-vertex mean and standard deviation of one series. Replicates are
/// standardized separately so that level differences between them (for
/// example from different noise amplitudes) do not masquerade as coupling.
pub(crate) fn series_moments(series: &MultivariateTimeSeries) -> (Vec<f64>, Vec<f64>) {
    let n = series.n_vertices();
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    let mut count = 0.0;
    for r in 0..series.len() {
        for v in 0..n {
            let x = series.value(r, v);
            sum[v] += x;
            sq[v] += x * x;
        }
        count += 1.0;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let sd = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let var = (q / count - m * m).max(0.0) * count / (count - 1.0).max(1.0);
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, sd)
}

/// Lagged design pooled over series. Columns `0..n` hold the next value of
/// each vertex; column `n + l*n + v` holds vertex `v` at lag `l` (0-based,
/// `l = 0` is the current step). Values are z-scored per series and vertex.
pub(crate) struct LagEmbedding {
    pub data: DMatrix<f64>,
    pub n: usize,
    pub lags: usize,
}

impl LagEmbedding {
    pub fn new(dataset: &Dataset, lags: usize) -> Result<Self> {
        if lags == 0 {
            return Err(Error::InvalidArgument("lag embedding needs lags >= 1".into()));
        }
        let n = dataset.n_vertices();
        let rows: usize = dataset
            .series
            .iter()
            .map(|s| s.len().saturating_sub(lags))
            .sum();
        if rows < 3 {
            return Err(Error::InsufficientData(format!("{rows} lagged samples")));
        }
        let mut data = DMatrix::zeros(rows, n * (lags + 1));
        let mut r = 0;
        for s in &dataset.series {
            let (mean, sd) = series_moments(s);
            for t in (lags - 1)..s.len().saturating_sub(1) {
                for v in 0..n {
                    let z = |row: usize| (s.value(row, v) - mean[v]) / sd[v];
                    data[(r, v)] = z(t + 1);
                    for l in 0..lags {
                        data[(r, n + l * n + v)] = z(t - l);
                    }
                }
                r += 1;
            }
        }
        Ok(Self { data, n, lags })
    }

    pub fn next(&self, v: usize) -> usize {
        v
    }

    pub fn past(&self, v: usize) -> Vec<usize> {
        (0..self.lags).map(|l| self.n + l * self.n + v).collect()
    }

    pub fn past_of(&self, vs: &[usize]) -> Vec<usize> {
        vs.iter().flat_map(|&v| self.past(v)).collect()
    }
}

/// Contemporaneous samples pooled over series, z-scored per series.
pub(crate) fn pooled_samples(dataset: &Dataset) -> DMatrix<f64> {
    let n = dataset.n_vertices();
    let rows: usize = dataset.series.iter().map(|s| s.len()).sum();
    let mut out = DMatrix::zeros(rows, n);
    let mut r = 0;
    for s in &dataset.series {
        let (mean, sd) = series_moments(s);
        for t in 0..s.len() {
            for v in 0..n {
                out[(r, v)] = (s.value(t, v) - mean[v]) / sd[v];
            }
            r += 1;
        }
    }
    out
}
