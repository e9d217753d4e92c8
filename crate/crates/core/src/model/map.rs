//! Reading of the training objective as a maximum a-posteriori energy.
//!
//! Data model: observations are the ODE mean plus white Gaussian noise of
//! variance `noise_variance`. Graph prior: a Boltzmann density
//! `exp(-β_G d(A, P))` with `d = α ‖A - P‖_F + (1 - α) ‖A‖_1`, averaged over
//! attention snapshots. With `T` time points, `κ = 2σ² / T` converts the
//! negative log-posterior to the loss scale, and the loss temperature is
//! `β = κ β_G`.

use nalgebra::DMatrix;
use statrs::distribution::{Continuous, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapCorrespondence {
    /// Boltzmann inverse temperature on the loss scale.
    pub beta: f64,
    /// Mixing weight between the Frobenius and L1 distances, in `[0, 1]`.
    pub alpha_mix: f64,
    pub noise_variance: f64,
}

impl MapCorrespondence {
    pub fn new(beta: f64, alpha_mix: f64, noise_variance: f64) -> Result<Self> {
        if !(beta >= 0.0 && (0.0..=1.0).contains(&alpha_mix) && noise_variance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need beta >= 0, alpha_mix in [0, 1], noise_variance > 0; got {beta}, {alpha_mix}, {noise_variance}"
            )));
        }
        Ok(Self {
            beta,
            alpha_mix,
            noise_variance,
        })
    }

    /// `(lambda1, lambda2)` of the matching training objective.
    pub fn lambdas(&self) -> (f64, f64) {
        (self.beta * self.alpha_mix, self.beta * (1.0 - self.alpha_mix))
    }

    /// `(κ, c)` with `loss = κ · energy + c` for `t` time points of `n`
    /// vertices.
    pub fn affine(&self, t: usize, n: usize) -> (f64, f64) {
        let kappa = 2.0 * self.noise_variance / t as f64;
        let log_norm = 0.5 * (t * n) as f64 * (2.0 * std::f64::consts::PI * self.noise_variance).ln();
        (kappa, -kappa * log_norm)
    }

    /// `-log P(D | G) - log P(G)` up to the prior's normalizer. `residuals`
    /// is `T x N` (prediction minus observation).
    pub fn neg_log_posterior(
        &self,
        residuals: &DMatrix<f64>,
        snapshots: &[DMatrix<f64>],
        prior: &DMatrix<f64>,
    ) -> Result<f64> {
        let noise = Normal::new(0.0, self.noise_variance.sqrt())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let nll: f64 = -residuals.iter().map(|&r| noise.ln_pdf(r)).sum::<f64>();
        if snapshots.is_empty() {
            return Ok(nll);
        }
        let (kappa, _) = self.affine(residuals.nrows().max(1), residuals.ncols());
        let beta_graph = self.beta / kappa;
        let mut distance = 0.0;
        for a in snapshots {
            let frob = (a - prior).norm();
            let l1: f64 = a.iter().map(|x| x.abs()).sum();
            distance += self.alpha_mix * frob + (1.0 - self.alpha_mix) * l1;
        }
        Ok(nll + beta_graph * distance / snapshots.len() as f64)
    }
}
