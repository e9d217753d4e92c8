use std::f64::consts::{E, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Plug-in Gaussian estimate from the sample covariance.
    Gaussian,
    /// Kozachenko-Leonenko nearest-neighbour estimate (max-norm).
    Knn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntropyEstimatorConfig {
    pub kind: EstimatorKind,
    /// Added to covariance diagonals before factorization.
    pub jitter: f64,
    pub k: usize,
}

impl Default for EntropyEstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Gaussian,
            jitter: 1e-8,
            k: 4,
        }
    }
}

impl EntropyEstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.jitter >= 0.0) || self.k == 0 {
            return Err(Error::Config(format!(
                "entropy estimator needs jitter >= 0 and k >= 1 (got {}, {})",
                self.jitter, self.k
            )));
        }
        Ok(())
    }
}

fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        acc += 2.0 * d.ln();
    }
    Some(acc)
}

/// Differential entropy (nats) of a Gaussian with covariance `cov`.
pub fn gaussian_entropy_from_cov(cov: &DMatrix<f64>) -> Result<f64> {
    let d = cov.nrows() as f64;
    let ld = log_det_spd(cov)
        .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?;
    Ok(0.5 * (d * (2.0 * PI * E).ln() + ld))
}

fn sample_covariance(data: &DMatrix<f64>) -> DMatrix<f64> {
    let m = data.nrows();
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    centered.transpose() * &centered / (m as f64 - 1.0)
}

fn hstack(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::SizeMismatch(format!(
            "{} samples of X, {} of Y",
            x.nrows(),
            y.nrows()
        )));
    }
    let mut out = DMatrix::zeros(x.nrows(), x.ncols() + y.ncols());
    out.columns_mut(0, x.ncols()).copy_from(x);
    out.columns_mut(x.ncols(), y.ncols()).copy_from(y);
    Ok(out)
}

/// Plug-in `h(X | Y) = h(X, Y) - h(Y)` from rows of `x` (m x p) and `y`
/// (m x q); `y` may have zero columns.
pub fn gaussian_conditional_entropy(x: &DMatrix<f64>, y: &DMatrix<f64>, jitter: f64) -> Result<f64> {
    let (m, p, q) = (x.nrows(), x.ncols(), y.ncols());
    if m <= p + q + 1 {
        return Err(Error::InsufficientData(format!(
            "{m} samples for {} dimensions",
            p + q
        )));
    }
    let mut cov = sample_covariance(&hstack(x, y)?);
    for i in 0..p + q {
        cov[(i, i)] += jitter;
    }
    let joint = gaussian_entropy_from_cov(&cov)?;
    let cond = gaussian_entropy_from_cov(&cov.view((p, p), (q, q)).into_owned())?;
    Ok(joint - cond)
}

/// Kozachenko-Leonenko entropy estimate with max-norm neighbourhoods.
pub fn knn_entropy(samples: &DMatrix<f64>, k: usize) -> Result<f64> {
    let (m, d) = (samples.nrows(), samples.ncols());
    if d == 0 {
        return Ok(0.0);
    }
    if m <= k {
        return Err(Error::InsufficientData(format!("{m} samples for k = {k}")));
    }
    let mut dists = vec![0.0; m];
    let mut sum_log = 0.0;
    for i in 0..m {
        for (j, dj) in dists.iter_mut().enumerate() {
            let mut best = 0.0f64;
            for c in 0..d {
                best = best.max((samples[(i, c)] - samples[(j, c)]).abs());
            }
            *dj = if i == j { f64::INFINITY } else { best };
        }
        let (_, eps, _) = dists.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
        if !(*eps > 0.0) {
            return Err(Error::Degenerate("duplicate samples in k-NN estimate".into()));
        }
        sum_log += (2.0 * *eps).ln();
    }
    Ok(digamma(m as f64) - digamma(k as f64) + d as f64 * sum_log / m as f64)
}

pub fn knn_conditional_entropy(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize) -> Result<f64> {
    Ok(knn_entropy(&hstack(x, y)?, k)? - knn_entropy(y, k)?)
}

/// Centered samples with their covariance, supporting conditional entropies
/// over column subsets with one block of columns circularly shifted.
#[derive(Clone, Debug)]
pub(crate) struct Samples {
    data: DMatrix<f64>,
    cov: DMatrix<f64>,
}

/// Columns `cols` circularly shifted down by `by` rows.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Shift<'a> {
    pub cols: &'a [usize],
    pub by: usize,
}

impl Samples {
    pub fn new(mut data: DMatrix<f64>) -> Self {
        for mut col in data.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        let m = data.nrows() as f64;
        let cov = data.transpose() * &data / (m - 1.0);
        Self { data, cov }
    }

    pub fn m(&self) -> usize {
        self.data.nrows()
    }

    fn shifted_cov(&self, c: usize, d: usize, by: usize) -> f64 {
        let m = self.m();
        let x = self.data.column(c);
        let y = self.data.column(d);
        let mut acc = 0.0;
        for r in 0..m {
            acc += x[(r + by) % m] * y[r];
        }
        acc / (m as f64 - 1.0)
    }

    fn sub_cov(&self, cols: &[usize], shift: Option<Shift>, jitter: f64) -> DMatrix<f64> {
        let k = cols.len();
        let is_shifted = |c: usize| shift.is_some_and(|s| s.cols.contains(&c));
        let mut out = DMatrix::zeros(k, k);
        for p in 0..k {
            for q in p..k {
                let (a, b) = (cols[p], cols[q]);
                let v = match shift {
                    Some(s) if is_shifted(a) != is_shifted(b) => {
                        if is_shifted(a) {
                            self.shifted_cov(a, b, s.by)
                        } else {
                            self.shifted_cov(b, a, s.by)
                        }
                    }
                    _ => self.cov[(a, b)],
                };
                out[(p, q)] = v;
                out[(q, p)] = v;
            }
            out[(p, p)] += jitter;
        }
        out
    }

    fn sub_samples(&self, cols: &[usize], shift: Option<Shift>) -> DMatrix<f64> {
        let m = self.m();
        DMatrix::from_fn(m, cols.len(), |r, p| {
            let c = cols[p];
            match shift {
                Some(s) if s.cols.contains(&c) => self.data[((r + s.by) % m, c)],
                _ => self.data[(r, c)],
            }
        })
    }

    /// `h(A | B)` over column subsets. Duplicate columns in `b` are ignored;
    /// `a` must not overlap `b`.
    pub fn conditional_entropy(
        &self,
        cfg: &EntropyEstimatorConfig,
        a: &[usize],
        b: &[usize],
        shift: Option<Shift>,
    ) -> Result<f64> {
        let mut bb: Vec<usize> = b.to_vec();
        bb.sort_unstable();
        bb.dedup();
        debug_assert!(a.iter().all(|c| !bb.contains(c)));
        let mut ab: Vec<usize> = a.to_vec();
        ab.extend_from_slice(&bb);
        if self.m() <= ab.len() + 1 {
            return Err(Error::InsufficientData(format!(
                "{} samples for {} dimensions",
                self.m(),
                ab.len()
            )));
        }
        match cfg.kind {
            EstimatorKind::Gaussian => {
                let degenerate =
                    || Error::Degenerate("covariance singular after jitter".into());
                let joint = log_det_spd(&self.sub_cov(&ab, shift, cfg.jitter)).ok_or_else(degenerate)?;
                let cond = log_det_spd(&self.sub_cov(&bb, shift, cfg.jitter)).ok_or_else(degenerate)?;
                Ok(0.5 * (joint - cond) + 0.5 * a.len() as f64 * (2.0 * PI * E).ln())
            }
            EstimatorKind::Knn => {
                let joint = knn_entropy(&self.sub_samples(&ab, shift), cfg.k)?;
                let cond = knn_entropy(&self.sub_samples(&bb, shift), cfg.k)?;
                Ok(joint - cond)
            }
        }
    }
}
