use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::rng_stream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignificanceConfig {
    pub n_perm: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for SignificanceConfig {
    fn default() -> Self {
        Self {
            n_perm: 100,
            alpha: 0.05,
            seed: 0,
        }
    }
}

impl SignificanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_perm < 19 {
            return Err(Error::Config(format!("n_perm = {} < 19", self.n_perm)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// Permutation test against circularly shifted surrogates. `null_stat`
/// evaluates the statistic with the candidate series shifted by the given
/// number of rows (out of `m`). Returns `(significant, p)` with
/// `p = (1 + #{null >= observed}) / (1 + n_perm)`.
pub fn permutation_significance<F>(
    observed: f64,
    m: usize,
    cfg: &SignificanceConfig,
    stream: u64,
    mut null_stat: F,
) -> Result<(bool, f64)>
where
    F: FnMut(usize) -> Result<f64>,
{
    cfg.validate()?;
    if m < 2 {
        return Err(Error::InsufficientData("need at least two samples to shift".into()));
    }
    let mut rng = rng_stream(cfg.seed, stream);
    let margin = (m / 10).max(1);
    let (lo, hi) = if m > 2 * margin { (margin, m - margin) } else { (1, m - 1) };
    let mut exceed = 0usize;
    for _ in 0..cfg.n_perm {
        let by = rng.random_range(lo..=hi);
        if null_stat(by)? >= observed {
            exceed += 1;
        }
    }
    let p = (1 + exceed) as f64 / (1 + cfg.n_perm) as f64;
    Ok((p < cfg.alpha, p))
}
