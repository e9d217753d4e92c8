use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{grid_step, rng_stream};
use crate::data::{default_vertex_names, Dataset, MultivariateTimeSeries, PerturbationRecord};
use crate::error::{Error, Result};
use crate::graph::WeightedDigraph;

const MAX_LAG: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FiveNodeConfig {
    pub steps: usize,
    /// Standard deviation of the per-step innovation.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Held for the first three steps.
    pub initial: [f64; 5],
    /// Each record produces one extra replicate that shares the noise
    /// stream of the unperturbed series.
    pub perturbations: Vec<PerturbationRecord>,
}

impl Default for FiveNodeConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            noise_sigma: 0.05,
            seed: 0,
            initial: [1.0, 0.0, 0.0, 0.5, 0.5],
            perturbations: Vec::new(),
        }
    }
}

impl FiveNodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < MAX_LAG + 1 {
            return Err(Error::Config(format!(
                "five-node system needs at least {} steps, got {}",
                MAX_LAG + 1,
                self.steps
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma {}", self.noise_sigma)));
        }
        if self.initial.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("non-finite initial value".into()));
        }
        for p in &self.perturbations {
            if p.vertex >= 5 {
                return Err(Error::Config(format!("perturbation vertex {}", p.vertex)));
            }
            grid_step(p, 1.0, self.steps)?;
        }
        Ok(())
    }
}

/// `{x1->x2, x1->x3, x1->x4, x4->x5, x5->x4}` with zero-based indices.
pub fn five_node_ground_truth() -> WeightedDigraph {
    WeightedDigraph::from_pairs(5, &[(0, 1), (0, 2), (0, 3), (3, 4), (4, 3)])
        .expect("static edge list")
}

fn run(cfg: &FiveNodeConfig, perturbations: &[(usize, &PerturbationRecord)]) -> DMatrix<f64> {
    let t_len = cfg.steps;
    let mut x = DMatrix::<f64>::zeros(t_len, 5);
    let mut rng = rng_stream(cfg.seed, 0);
    let s2 = SQRT_2;
    for t in 0..t_len {
        if t < MAX_LAG {
            for v in 0..5 {
                x[(t, v)] = cfg.initial[v];
            }
        } else {
            let mut e = [0.0; 5];
            for ev in &mut e {
                let z: f64 = StandardNormal.sample(&mut rng);
                *ev = cfg.noise_sigma * z;
            }
            let p = |lag: usize, v: usize| x[(t - lag, v)];
            let x1 = 0.95 * s2 * p(1, 0) - 0.9025 * p(2, 0);
            let x2 = 0.5 * p(2, 0).powi(2);
            let x3 = -0.4 * p(3, 0);
            let x4 = -0.5 * p(2, 0).powi(2) + 0.5 * s2 * p(1, 3) + 0.25 * s2 * p(1, 4);
            let x5 = -0.5 * s2 * p(1, 3) + 0.5 * s2 * p(1, 4);
            for (v, val) in [x1, x2, x3, x4, x5].into_iter().enumerate() {
                x[(t, v)] = val + e[v];
            }
        }
        for &(step, rec) in perturbations {
            if step == t {
                x[(t, rec.vertex)] += rec.epsilon;
            }
        }
    }
    x
}

/// Simulates the five-variable nonlinear autoregressive system. Row `t`
/// depends on rows `t-1..t-3` plus an innovation; the first three rows hold
/// `initial`.
pub fn simulate_five_node(cfg: &FiveNodeConfig) -> Result<Dataset> {
    cfg.validate()?;
    let names = default_vertex_names(5);
    let times: Vec<f64> = (0..cfg.steps).map(|t| t as f64).collect();
    let mut series = vec![MultivariateTimeSeries::new(
        times.clone(),
        run(cfg, &[]),
        names.clone(),
    )?];
    let mut perturbations = BTreeMap::new();
    for rec in &cfg.perturbations {
        let step = grid_step(rec, 1.0, cfg.steps)?;
        series.push(MultivariateTimeSeries::new(
            times.clone(),
            run(cfg, &[(step, rec)]),
            names.clone(),
        )?);
        perturbations.insert(series.len() - 1, vec![rec.clone()]);
    }
    Ok(Dataset::new(series, perturbations, Some(five_node_ground_truth()), None)?
        .with_info(serde_json::json!({
            "system": "five-node",
            "noise_sigma": cfg.noise_sigma,
            "seed": cfg.seed,
        })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_fixed_point() {
        let cfg = FiveNodeConfig {
            noise_sigma: 0.0,
            initial: [0.0; 5],
            ..Default::default()
        };
        let d = simulate_five_node(&cfg).unwrap();
        assert!(d.series[0].values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ground_truth_edges() {
        let d = simulate_five_node(&FiveNodeConfig::default()).unwrap();
        let g = d.ground_truth.unwrap();
        assert_eq!(g.num_edges(), 5);
        for (s, t) in [(0, 1), (0, 2), (0, 3), (3, 4), (4, 3)] {
            assert!(g.has_edge(s, t));
        }
    }

    #[test]
    fn bounded_over_long_runs() {
        let cfg = FiveNodeConfig {
            steps: 5000,
            noise_sigma: 0.25,
            ..Default::default()
        };
        let d = simulate_five_node(&cfg).unwrap();
        assert!(d.series[0].values().amax() < 50.0);
    }

    #[test]
    fn perturbed_replicate_shares_noise() {
        let cfg = FiveNodeConfig {
            perturbations: vec![PerturbationRecord::additive(3, 50.0, 0.5)],
            ..Default::default()
        };
        let d = simulate_five_node(&cfg).unwrap();
        let (a, b) = (d.series[0].values(), d.series[1].values());
        for t in 0..50 {
            for v in 0..5 {
                assert_eq!(a[(t, v)], b[(t, v)]);
            }
        }
        assert!((b[(50, 3)] - a[(50, 3)] - 0.5).abs() < 1e-12);
        // x1, x2, x3 are not downstream of x4.
        for t in 50..cfg.steps {
            for v in 0..3 {
                assert_eq!(a[(t, v)], b[(t, v)]);
            }
        }
        assert_ne!(a[(60, 4)], b[(60, 4)]);
        assert!(d.is_perturbed(1));
    }

    #[test]
    fn rejects_short_runs() {
        let cfg = FiveNodeConfig {
            steps: 3,
            ..Default::default()
        };
        assert!(simulate_five_node(&cfg).is_err());
    }
}
