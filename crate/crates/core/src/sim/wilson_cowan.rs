use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::network::{random_network, LabeledNetwork};
use super::{check_finite_state, grid_step, rng_stream};
use crate::data::{default_vertex_names, Dataset, MultivariateTimeSeries, PerturbationRecord};
use crate::error::{Error, Result};

/// Network rate model, one rate per vertex:
/// `tau_i dr_i/dt = alpha_i S(sum_j w_ij r_j) - theta_i - r_i`
/// with `w_ij` signed by the source's excitatory/inhibitory label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilsonCowanConfig {
    pub network: LabeledNetwork,
    pub gain: Vec<f64>,
    pub threshold: Vec<f64>,
    pub tau: Vec<f64>,
    /// Sigmoid steepness `a` in `S(x) = s(a(x - shift)) - s(-a shift)`.
    pub steepness: f64,
    pub shift: f64,
    /// Number of emitted samples.
    pub steps: usize,
    /// Integration step.
    pub dt: f64,
    /// Integration steps per emitted sample.
    pub sample_every: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub initial: Option<Vec<f64>>,
    pub perturbations: Vec<PerturbationRecord>,
}

impl WilsonCowanConfig {
    /// Random excitatory/inhibitory network with conventional parameters.
    pub fn random(n: usize, edge_probability: f64, seed: u64) -> Result<Self> {
        let mut network = random_network(n, edge_probability, 0.8, seed)?;
        let edges: Vec<_> = network.graph.edges().collect();
        let mut rng = rng_stream(seed, 3);
        for e in edges {
            network.graph.add_edge(e.src, e.dst, rng.random_range(4.0..8.0))?;
        }
        let tau = (0..n).map(|i| if network.excitatory[i] { 1.0 } else { 2.0 }).collect();
        Ok(Self {
            network,
            gain: vec![1.0; n],
            threshold: vec![0.0; n],
            tau,
            steepness: 1.2,
            shift: 2.8,
            steps: 500,
            dt: 0.05,
            sample_every: 4,
            noise_sigma: 0.05,
            seed,
            initial: None,
            perturbations: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.network.n()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        for (name, v) in [("gain", &self.gain), ("threshold", &self.threshold), ("tau", &self.tau)] {
            if v.len() != n {
                return Err(Error::Config(format!("{name} has {} entries for {n} vertices", v.len())));
            }
        }
        if let Some(init) = &self.initial {
            if init.len() != n {
                return Err(Error::Config(format!("initial state has {} entries", init.len())));
            }
        }
        let min_tau = self.tau.iter().cloned().fold(f64::INFINITY, f64::min);
        if self.tau.iter().any(|&t| t <= 0.0) {
            return Err(Error::Config("time constants must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt <= min_tau / 10.0 + 1e-15) {
            return Err(Error::Config(format!(
                "dt {} must be in (0, min(tau)/10 = {}]",
                self.dt,
                min_tau / 10.0
            )));
        }
        if self.steps < 2 || self.sample_every == 0 {
            return Err(Error::Config("need at least two samples".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("negative noise".into()));
        }
        for p in &self.perturbations {
            if p.vertex >= n {
                return Err(Error::Config(format!("perturbation vertex {}", p.vertex)));
            }
            grid_step(p, self.sample_dt(), self.steps)?;
        }
        Ok(())
    }

    pub fn sample_dt(&self) -> f64 {
        self.dt * self.sample_every as f64
    }
}

/// Shifted logistic with `S(0) = 0`.
pub fn wc_sigmoid(x: f64, steepness: f64, shift: f64) -> f64 {
    let s = |z: f64| 1.0 / (1.0 + (-z).exp());
    s(steepness * (x - shift)) - s(-steepness * shift)
}

struct Rhs<'a> {
    cfg: &'a WilsonCowanConfig,
    inputs: Vec<Vec<(usize, f64)>>,
}

impl Rhs<'_> {
    fn eval(&self, r: &[f64], out: &mut [f64]) {
        let c = self.cfg;
        for i in 0..r.len() {
            let drive: f64 = self.inputs[i].iter().map(|&(j, w)| w * r[j]).sum();
            out[i] = (c.gain[i] * wc_sigmoid(drive, c.steepness, c.shift) - c.threshold[i] - r[i])
                / c.tau[i];
        }
    }

    fn rk4_step(&self, r: &mut [f64], h: f64, scratch: &mut [Vec<f64>; 5]) {
        let [k1, k2, k3, k4, tmp] = scratch;
        self.eval(r, k1);
        for i in 0..r.len() {
            tmp[i] = r[i] + 0.5 * h * k1[i];
        }
        self.eval(tmp, k2);
        for i in 0..r.len() {
            tmp[i] = r[i] + 0.5 * h * k2[i];
        }
        self.eval(tmp, k3);
        for i in 0..r.len() {
            tmp[i] = r[i] + h * k3[i];
        }
        self.eval(tmp, k4);
        for i in 0..r.len() {
            r[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

fn run(cfg: &WilsonCowanConfig, perturbations: &[(usize, &PerturbationRecord)]) -> Result<DMatrix<f64>> {
    let n = cfg.n();
    let rhs = Rhs {
        cfg,
        inputs: cfg.network.signed_inputs(),
    };
    let mut r = match &cfg.initial {
        Some(v) => v.clone(),
        None => {
            let mut rng = rng_stream(cfg.seed, 1);
            (0..n).map(|_| rng.random_range(0.0..0.5)).collect()
        }
    };
    let mut noise = rng_stream(cfg.seed, 2);
    let mut scratch: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let mut out = DMatrix::zeros(cfg.steps, n);
    let sd = cfg.noise_sigma * cfg.dt.sqrt();
    for k in 0..cfg.steps {
        if k > 0 {
            for sub in 0..cfg.sample_every {
                rhs.rk4_step(&mut r, cfg.dt, &mut scratch);
                if cfg.noise_sigma > 0.0 {
                    for ri in r.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut noise);
                        *ri += sd * z;
                    }
                }
                check_finite_state(&r, (k - 1) * cfg.sample_every + sub + 1, "wilson-cowan")?;
            }
        }
        for &(step, rec) in perturbations {
            if step == k {
                r[rec.vertex] += rec.epsilon;
            }
        }
        for i in 0..n {
            out[(k, i)] = r[i];
        }
    }
    Ok(out)
}

pub fn simulate_wilson_cowan(cfg: &WilsonCowanConfig) -> Result<Dataset> {
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
        Dataset::new(series, perturbations, Some(cfg.network.graph.clone()), None)?.with_info(
            serde_json::json!({
                "system": "wilson-cowan",
                "seed": cfg.seed,
                "excitatory": cfg.network.excitatory,
            }),
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WeightedDigraph;

    #[test]
    fn sigmoid_vanishes_at_zero() {
        assert!(wc_sigmoid(0.0, 1.3, 4.0).abs() < 1e-16);
        assert!(wc_sigmoid(10.0, 1.3, 4.0) > 0.9);
    }

    #[test]
    fn rejects_coarse_step() {
        let mut cfg = WilsonCowanConfig::random(4, 0.5, 1).unwrap();
        cfg.dt = 0.2;
        assert!(matches!(simulate_wilson_cowan(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn blow_up_is_reported() {
        let net = LabeledNetwork::new(WeightedDigraph::empty(1), vec![true]).unwrap();
        let cfg = WilsonCowanConfig {
            network: net,
            gain: vec![1.0],
            threshold: vec![0.0],
            tau: vec![1.0],
            steepness: 1.0,
            shift: 0.0,
            steps: 10,
            dt: 0.1,
            sample_every: 1,
            noise_sigma: 0.0,
            seed: 0,
            initial: Some(vec![f64::INFINITY]),
            perturbations: vec![],
        };
        assert!(matches!(simulate_wilson_cowan(&cfg), Err(Error::BlowUp { .. })));
    }
}
