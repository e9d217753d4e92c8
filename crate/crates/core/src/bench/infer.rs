use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{split_holdout, Dataset, MultivariateTimeSeries};
use crate::error::{Error, Result};
use crate::format::{fmt_f64, to_json_string};
use crate::graph::PriorGraph;
use crate::model::{default_prior, train_on, ExtractedGraphs, TrainConfig, TrainedModel};

/// Where the attention support and Frobenius target come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorSource {
    /// The dataset's own prior, else Granger causality.
    #[default]
    AutoGc,
    /// The dataset's ground truth (oracle prior, for diagnostics).
    Truth,
}

/// Attention-model settings of one benchmark cell or `infer` run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RitiniMethodConfig {
    /// Attention above this is an edge.
    pub threshold: f64,
    /// Share of interior samples held out of training for interpolation
    /// scoring; 0 disables.
    pub holdout_fraction: f64,
    pub prior: PriorSource,
    pub train: TrainConfig,
}

impl Default for RitiniMethodConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            holdout_fraction: 0.1,
            prior: PriorSource::AutoGc,
            train: TrainConfig::default(),
        }
    }
}

impl RitiniMethodConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0) {
            return Err(Error::Config(format!("threshold {} must be nonnegative", self.threshold)));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!(
                "holdout_fraction {} outside [0, 1)",
                self.holdout_fraction
            )));
        }
        self.train.validate()
    }
}

/// Held-out interpolation scores over the unperturbed series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldOutScores {
    /// Mean squared error of model predictions, data units.
    pub mse: f64,
    /// Same points predicted by linear interpolation of the neighbouring
    /// training samples.
    pub interpolation_mse: f64,
    /// Per-vertex MSE divided by that vertex's signal variance, averaged
    /// over vertices.
    pub relative_mse: f64,
    pub points: usize,
}

pub struct Inference {
    pub model: TrainedModel,
    pub prior: PriorGraph,
    pub graphs: ExtractedGraphs,
    /// Training sample indices shared by every series.
    pub observed: Vec<usize>,
    pub held_out: Vec<usize>,
    pub scores: Option<HeldOutScores>,
    pub threshold: f64,
}

pub fn build_prior(dataset: &Dataset, source: PriorSource, lags: usize) -> Result<PriorGraph> {
    let g = match source {
        PriorSource::AutoGc => match &dataset.prior {
            Some(p) => p.clone(),
            None => default_prior(dataset, lags)?,
        },
        PriorSource::Truth => dataset
            .ground_truth
            .clone()
            .ok_or_else(|| Error::Config("prior = \"truth\" needs a dataset with ground truth".into()))?,
    };
    Ok(PriorGraph::new(g))
}

/// Trains the attention model with `seed`, extracts graphs and scores
/// held-out interpolation.
pub fn infer(dataset: &Dataset, cfg: &RitiniMethodConfig, seed: u64) -> Result<Inference> {
    let prior = build_prior(dataset, cfg.prior, cfg.train.model.lags)?;
    infer_with_prior(dataset, prior, cfg, seed)
}

pub fn infer_with_prior(
    dataset: &Dataset,
    prior: PriorGraph,
    cfg: &RitiniMethodConfig,
    seed: u64,
) -> Result<Inference> {
    cfg.validate()?;
    dataset.validate()?;
    let len = dataset.series.iter().map(MultivariateTimeSeries::len).min().unwrap_or(0);
    let (observed, held_out) = if cfg.holdout_fraction > 0.0 {
        split_holdout(len, cfg.holdout_fraction, seed)?
    } else {
        ((0..len).collect(), Vec::new())
    };
    let train_cfg = TrainConfig { seed, ..cfg.train };
    let lists: Vec<Vec<usize>> = dataset.series.iter().map(|_| observed.clone()).collect();
    let model = train_on(dataset, &prior, &train_cfg, Some(&lists))?;
    let graphs = model.extract_graphs(cfg.threshold)?;
    let scores = if held_out.is_empty() {
        None
    } else {
        Some(held_out_scores(&model, dataset, &observed, &held_out)?)
    };
    Ok(Inference {
        model,
        prior,
        graphs,
        observed,
        held_out,
        scores,
        threshold: cfg.threshold,
    })
}

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

/// Linear interpolation at sample `k` from the nearest observed samples on
/// either side.
fn interpolate(series: &MultivariateTimeSeries, observed: &[usize], k: usize, v: usize) -> f64 {
    let r = observed.partition_point(|&i| i < k);
    let (a, b) = (observed[r - 1], observed[r]);
    let t = series.times();
    let w = (t[k] - t[a]) / (t[b] - t[a]);
    (1.0 - w) * series.value(a, v) + w * series.value(b, v)
}

/// Scores held-out samples of every unperturbed series (all series when
/// every one is perturbed).
pub fn held_out_scores(
    model: &TrainedModel,
    dataset: &Dataset,
    observed: &[usize],
    held_out: &[usize],
) -> Result<HeldOutScores> {
    let n = dataset.n_vertices();
    let mut targets: Vec<usize> = (0..dataset.series.len()).filter(|&k| !dataset.is_perturbed(k)).collect();
    if targets.is_empty() {
        targets = (0..dataset.series.len()).collect();
    }
    let mut sq = vec![0.0; n];
    let mut sq_interp = 0.0;
    let mut var = vec![0.0; n];
    let mut points = 0;
    for &k in &targets {
        let s = &dataset.series[k];
        let queries: Vec<f64> = held_out.iter().map(|&h| s.times()[h]).collect();
        let pred = model.predict(s, Some(observed), &queries)?;
        for (q, &h) in held_out.iter().enumerate() {
            for v in 0..n {
                sq[v] += (pred[(q, v)] - s.value(h, v)).powi(2);
                sq_interp += (interpolate(s, observed, h, v) - s.value(h, v)).powi(2);
            }
        }
        for (v, acc) in var.iter_mut().enumerate() {
            *acc += variance(&s.column(v));
        }
        points += held_out.len();
    }
    let cells = (points * n) as f64;
    let relative = (0..n)
        .map(|v| {
            let mse_v = sq[v] / points as f64;
            let var_v = var[v] / targets.len() as f64;
            if var_v > 0.0 {
                mse_v / var_v
            } else if mse_v == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .sum::<f64>()
        / n as f64;
    Ok(HeldOutScores {
        mse: sq.iter().sum::<f64>() / cells,
        interpolation_mse: sq_interp / cells,
        relative_mse: relative,
        points,
    })
}

#[derive(Serialize)]
struct RunReport<'a> {
    threshold: f64,
    loss_history: &'a [f64],
    hysteresis_index: f64,
    lag_weights: Vec<f64>,
    held_out: Option<HeldOutScores>,
    held_out_indices: &'a [usize],
    prior_edges: usize,
    static_edges: usize,
}

impl Inference {
    /// Writes `static_graph.json`, `dynamic_graph.json`, `prior_graph.json`,
    /// `trajectories.csv`, `model.json` and `report.json` into `dir`.
    pub fn write(&self, dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.graphs.static_graph.save(dir.join("static_graph.json"))?;
        fs::write(dir.join("dynamic_graph.json"), self.graphs.dynamic.to_json())?;
        self.prior.digraph().save(dir.join("prior_graph.json"))?;
        fs::write(dir.join("trajectories.csv"), self.trajectories_csv(dataset)?)?;
        self.model.save(dir.join("model.json"))?;
        let report = RunReport {
            threshold: self.threshold,
            loss_history: &self.model.loss_history,
            hysteresis_index: self.model.hysteresis_index(),
            lag_weights: self.model.params.lag_weights(),
            held_out: self.scores,
            held_out_indices: &self.held_out,
            prior_edges: self.prior.digraph().without_self_loops().num_edges(),
            static_edges: self.graphs.static_graph.num_edges(),
        };
        fs::write(dir.join("report.json"), to_json_string(&report)?)?;
        Ok(())
    }

    /// Long-format predictions at every sample of every series:
    /// `series,time,split,vertex,observed,predicted`.
    pub fn trajectories_csv(&self, dataset: &Dataset) -> Result<String> {
        let mut out = String::from("series,time,split,vertex,observed,predicted\n");
        for (k, s) in dataset.series.iter().enumerate() {
            let pred = self.model.predict(s, Some(&self.observed), s.times())?;
            for (r, &t) in s.times().iter().enumerate() {
                let split = if self.held_out.binary_search(&r).is_ok() { "heldout" } else { "train" };
                for v in 0..s.n_vertices() {
                    out.push_str(&format!(
                        "{k},{},{split},{},{},{}\n",
                        fmt_f64(t),
                        s.vertex_names()[v],
                        fmt_f64(s.value(r, v)),
                        fmt_f64(pred[(r, v)])
                    ));
                }
            }
        }
        Ok(out)
    }
}
