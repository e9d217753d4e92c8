use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_finite_state, grid_step, rng_stream};
use crate::data::{default_vertex_names, Dataset, MultivariateTimeSeries, PerturbationRecord};
use crate::error::{Error, Result};
use crate::graph::WeightedDigraph;

/// Mean-field gating model. Time is in seconds, currents in nA, rates in Hz.
/// An edge `j -> i` of `coupling` with weight `c` is the entry `C_ij = c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmfConfig {
    pub coupling: WeightedDigraph,
    pub tau_s: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub w: f64,
    pub g: f64,
    pub j_n: f64,
    pub i_o: f64,
    pub steps: usize,
    pub dt: f64,
    pub sample_every: usize,
    pub seed: u64,
    pub initial: Option<Vec<f64>>,
    pub perturbations: Vec<PerturbationRecord>,
}

impl DmfConfig {
    pub fn new(coupling: WeightedDigraph) -> Self {
        Self {
            coupling,
            tau_s: 0.1,
            gamma: 0.641,
            sigma: 0.001,
            a: 270.0,
            b: 108.0,
            d: 0.154,
            w: 0.9,
            g: 0.5,
            j_n: 0.2609,
            i_o: 0.382,
            steps: 500,
            dt: 0.001,
            sample_every: 10,
            seed: 0,
            initial: None,
            perturbations: Vec::new(),
        }
    }

    /// Random coupling with weights uniform in `[0.1, 1)`.
    pub fn random(n: usize, edge_probability: f64, seed: u64) -> Result<Self> {
        let net = super::random_network(n, edge_probability, 1.0, seed)?;
        let mut rng = rng_stream(seed, 3);
        let mut coupling = WeightedDigraph::empty(n);
        for e in net.graph.edges() {
            coupling.add_edge(e.src, e.dst, rng.random_range(0.1..1.0))?;
        }
        let mut cfg = Self::new(coupling);
        cfg.seed = seed;
        Ok(cfg)
    }

    pub fn n(&self) -> usize {
        self.coupling.n()
    }

    pub fn sample_dt(&self) -> f64 {
        self.dt * self.sample_every as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_s > 0.0) {
            return Err(Error::Config("tau_s must be positive".into()));
        }
        if !(self.dt > 0.0) || self.sample_every == 0 || self.steps < 2 {
            return Err(Error::Config("invalid time grid".into()));
        }
        if self.sigma < 0.0 {
            return Err(Error::Config("negative noise amplitude".into()));
        }
        if let Some(init) = &self.initial {
            if init.len() != self.n() {
                return Err(Error::Config(format!("initial state has {} entries", init.len())));
            }
        }
        for p in &self.perturbations {
            if p.vertex >= self.n() {
                return Err(Error::Config(format!("perturbation vertex {}", p.vertex)));
            }
            grid_step(p, self.sample_dt(), self.steps)?;
        }
        Ok(())
    }

    /// Synaptic input `x_i` for gating state `s`.
    pub fn input(&self, s: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = s
            .iter()
            .map(|&si| self.w * self.j_n * si + self.i_o)
            .collect();
        for e in self.coupling.edges() {
            x[e.dst] -= self.g * self.j_n * e.weight * s[e.src];
        }
        x
    }

    /// Deterministic part of `dS/dt`.
    pub fn drift(&self, s: &[f64]) -> Vec<f64> {
        self.input(s)
            .iter()
            .zip(s)
            .map(|(&x, &si)| -si / self.tau_s + self.gamma * (1.0 - si) * dmf_transfer(x, self.a, self.b, self.d))
            .collect()
    }
}

/// `H(x) = (a x - b) / (1 - exp(-d (a x - b)))`, continuous at `a x = b`.
pub fn dmf_transfer(x: f64, a: f64, b: f64, d: f64) -> f64 {
    let z = a * x - b;
    if (d * z).abs() < 1e-6 {
        1.0 / d + 0.5 * z + d * z * z / 12.0
    } else {
        z / -(-d * z).exp_m1()
    }
}

fn run(cfg: &DmfConfig, perturbations: &[(usize, &PerturbationRecord)]) -> Result<DMatrix<f64>> {
    let n = cfg.n();
    let mut s = match &cfg.initial {
        Some(v) => v.clone(),
        None => {
            let mut rng = rng_stream(cfg.seed, 1);
            (0..n).map(|_| rng.random_range(0.0..0.5)).collect()
        }
    };
    let mut noise = rng_stream(cfg.seed, 2);
    let sd = cfg.sigma * cfg.dt.sqrt();
    let mut out = DMatrix::zeros(cfg.steps, n);
    for k in 0..cfg.steps {
        if k > 0 {
            for sub in 0..cfg.sample_every {
                let f = cfg.drift(&s);
                for (si, fi) in s.iter_mut().zip(f) {
                    *si += cfg.dt * fi;
                    if cfg.sigma > 0.0 {
                        let z: f64 = StandardNormal.sample(&mut noise);
                        *si += sd * z;
                    }
                }
                check_finite_state(&s, (k - 1) * cfg.sample_every + sub + 1, "dmf")?;
            }
        }
        for &(step, rec) in perturbations {
            if step == k {
                s[rec.vertex] += rec.epsilon;
            }
        }
        for i in 0..n {
            out[(k, i)] = s[i];
        }
    }
    Ok(out)
}

pub fn simulate_dmf(cfg: &DmfConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.n();
    let sdt = cfg.sample_dt();
    let times: Vec<f64> = (0..cfg.steps).map(|k| k as f64 * sdt).collect();
    let names = default_vertex_names(n);
    let mut series = vec![MultivariateTimeSeries::new(times.clone(), run(cfg, &[])?, names.clone())?];
    let mut perturbations = BTreeMap::new();
    for rec in &cfg.perturbations {
        let step = grid_step(rec, sdt, cfg.steps)?;
        series.push(MultivariateTimeSeries::new(
            times.clone(),
            run(cfg, &[(step, rec)])?,
            names.clone(),
        )?);
        perturbations.insert(series.len() - 1, vec![rec.clone()]);
    }
    Ok(
        Dataset::new(series, perturbations, Some(cfg.coupling.clone()), None)?
            .with_info(serde_json::json!({"system": "dmf", "seed": cfg.seed})),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recurrence_default() {
        assert_eq!(DmfConfig::new(WeightedDigraph::empty(2)).w, 0.9);
    }

    #[test]
    fn transfer_is_smooth_through_the_limit() {
        let (a, b, d) = (270.0, 108.0, 0.154);
        let x0 = b / a;
        let h0 = dmf_transfer(x0, a, b, d);
        assert!((h0 - 1.0 / d).abs() < 1e-12);
        for eps in [1e-9, 1e-8, 1e-7, 1e-6] {
            let lo = dmf_transfer(x0 - eps, a, b, d);
            let hi = dmf_transfer(x0 + eps, a, b, d);
            assert!((lo - h0).abs() < 1e-3 && (hi - h0).abs() < 1e-3);
        }
    }
}
