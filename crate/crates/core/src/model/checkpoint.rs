use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::params::ModelParameters;
use super::train::{Standardizer, TrainConfig, TrainedModel};
use crate::autodiff::ParameterStore;
use crate::error::{Error, Result};
use crate::format::to_json_string;
use crate::graph::AttentionTrajectory;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    config: TrainConfig,
    parameters: serde_json::Value,
    normalization: Standardizer,
    dt: f64,
    t_min: f64,
    t_max: f64,
    support: Vec<Vec<bool>>,
    prior_adjacency: Vec<Vec<f64>>,
    attention_times: Vec<f64>,
    attention: Vec<Vec<Vec<f64>>>,
    loss_history: Vec<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if r.len() != n || r.iter().any(|row| row.len() != n) {
        return Err(Error::Validation(format!("expected a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| r[i][j]))
}

impl TrainedModel {
    pub fn to_json(&self) -> String {
        let n = self.n_vertices();
        let file = ModelFile {
            config: self.config,
            parameters: serde_json::from_str(&self.params.store.to_json())
                .expect("parameter store emits valid JSON"),
            normalization: self.normalization.clone(),
            dt: self.dt,
            t_min: self.t_min,
            t_max: self.t_max,
            support: self.support.chunks(n).map(<[bool]>::to_vec).collect(),
            prior_adjacency: rows(&self.prior_adjacency),
            attention_times: self.attention.times.clone(),
            attention: self.attention.snapshots.iter().map(rows).collect(),
            loss_history: self.loss_history.clone(),
        };
        to_json_string(&file).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s)?;
        f.config.validate()?;
        let n = f.normalization.mean.len();
        if f.normalization.std.len() != n || f.support.len() != n || f.support.iter().any(|r| r.len() != n) {
            return Err(Error::Validation("inconsistent vertex count in model file".into()));
        }
        let store = ParameterStore::from_json(&f.parameters.to_string())?;
        let params = ModelParameters::from_store(f.config.model, store)?;
        let snapshots = f
            .attention
            .iter()
            .map(|m| from_rows(m, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            config: f.config,
            normalization: f.normalization,
            dt: f.dt,
            t_min: f.t_min,
            t_max: f.t_max,
            support: f.support.concat(),
            prior_adjacency: from_rows(&f.prior_adjacency, n)?,
            attention: AttentionTrajectory::new(f.attention_times, snapshots)?,
            loss_history: f.loss_history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
