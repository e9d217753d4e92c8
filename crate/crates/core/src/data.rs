//! Time-series datasets: lag windows, perturbation injection, held-out
//! splitting and the on-disk directory layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{fmt_f64, to_json_string};
use crate::graph::WeightedDigraph;

const GRID_RTOL: f64 = 1e-9;

/// Vertex signals sampled on a uniform grid. Row = time point, column = vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct MultivariateTimeSeries {
    times: Vec<f64>,
    values: DMatrix<f64>,
    vertex_names: Vec<String>,
}

impl MultivariateTimeSeries {
    pub fn new(times: Vec<f64>, values: DMatrix<f64>, vertex_names: Vec<String>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::EmptyInput("time series has no samples".into()));
        }
        if values.nrows() != times.len() {
            return Err(Error::SizeMismatch(format!(
                "{} times but {} value rows",
                times.len(),
                values.nrows()
            )));
        }
        if vertex_names.len() != values.ncols() {
            return Err(Error::SizeMismatch(format!(
                "{} vertex names but {} columns",
                vertex_names.len(),
                values.ncols()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("times must be strictly increasing".into()));
        }
        if times.len() > 2 {
            let dt = times[1] - times[0];
            for (k, w) in times.windows(2).enumerate() {
                let step = w[1] - w[0];
                if (step - dt).abs() > GRID_RTOL * dt.abs().max(w[1].abs()) {
                    return Err(Error::Validation(format!(
                        "non-uniform time step at index {}: {step} vs {dt}",
                        k + 1
                    )));
                }
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at row {}, column {}",
                pos % values.nrows(),
                pos / values.nrows()
            )));
        }
        Ok(Self {
            times,
            values,
            vertex_names,
        })
    }

    /// Series on the grid `t0 + k * dt` with default vertex names `v0..`.
    pub fn from_grid(t0: f64, dt: f64, values: DMatrix<f64>) -> Result<Self> {
        let times = (0..values.nrows()).map(|k| t0 + k as f64 * dt).collect();
        let names = default_vertex_names(values.ncols());
        Self::new(times, values, names)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn vertex_names(&self) -> &[String] {
        &self.vertex_names
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_vertices(&self) -> usize {
        self.values.ncols()
    }

    /// Sampling step; 1.0 for a single-sample series.
    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            1.0
        } else {
            (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
        }
    }

    pub fn value(&self, index: usize, vertex: usize) -> f64 {
        self.values[(index, vertex)]
    }

    pub fn column(&self, vertex: usize) -> Vec<f64> {
        self.values.column(vertex).iter().copied().collect()
    }

    /// Grid index of `t`, or an alignment error.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let t0 = self.times[0];
        let dt = self.dt();
        let k = ((t - t0) / dt).round();
        if k < 0.0 || k as usize >= self.times.len() {
            return Err(Error::OffGrid { time: t });
        }
        let k = k as usize;
        if (self.times[k] - t).abs() > GRID_RTOL * dt.abs().max(t.abs()).max(1.0) {
            return Err(Error::OffGrid { time: t });
        }
        Ok(k)
    }
}

pub fn default_vertex_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("v{i}")).collect()
}

/// Additive injection of `epsilon` into one vertex at one grid time.
///
/// `parameter` names a simulator parameter when the perturbation was applied
/// to a model parameter instead of the signal itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub vertex: usize,
    pub time: f64,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<String>,
}

impl PerturbationRecord {
    pub fn additive(vertex: usize, time: f64, epsilon: f64) -> Self {
        Self {
            vertex,
            time,
            epsilon,
            parameter: None,
        }
    }
}

/// Lag window at grid time `t`: row `l` holds `X(., t - l*dt)` for `l` in
/// `0..lags`. Times before the series start repeat the first observation.
/// Non-NaN entries of `history` (shape `lags x N`) override observed values.
pub fn lag_window(
    series: &MultivariateTimeSeries,
    t: f64,
    lags: usize,
    history: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    if lags == 0 {
        return Err(Error::InvalidArgument("lag count must be at least 1".into()));
    }
    let k = series.index_of(t)?;
    let n = series.n_vertices();
    if let Some(h) = history {
        if h.nrows() != lags || h.ncols() != n {
            return Err(Error::SizeMismatch(format!(
                "history override is {}x{}, expected {lags}x{n}",
                h.nrows(),
                h.ncols()
            )));
        }
    }
    Ok(DMatrix::from_fn(lags, n, |l, v| {
        if let Some(h) = history {
            let o = h[(l, v)];
            if !o.is_nan() {
                return o;
            }
        }
        series.values[(k.saturating_sub(l), v)]
    }))
}

/// Copy of `series` with `epsilon` added at `(record.time, record.vertex)`.
pub fn apply_perturbation(
    series: &MultivariateTimeSeries,
    record: &PerturbationRecord,
) -> Result<MultivariateTimeSeries> {
    if record.vertex >= series.n_vertices() {
        return Err(Error::Validation(format!(
            "perturbation vertex {} out of range",
            record.vertex
        )));
    }
    let k = series.index_of(record.time)?;
    let mut out = series.clone();
    out.values[(k, record.vertex)] += record.epsilon;
    Ok(out)
}

/// Partition of `0..len` into training and held-out indices. Held-out
/// indices are interior, drawn uniformly without replacement.
pub fn split_holdout(len: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if len < 4 {
        return Err(Error::InsufficientData(format!(
            "need at least 4 time points to hold out, got {len}"
        )));
    }
    let held_count = (fraction * len as f64 + 1e-9).floor() as usize;
    if held_count > len - 2 {
        return Err(Error::InsufficientData(format!(
            "holding out {held_count} of {len} points leaves fewer than 2 for training"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held: Vec<usize> = sample(&mut rng, len - 2, held_count)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    held.sort_unstable();
    let train = (0..len).filter(|i| held.binary_search(i).is_err()).collect();
    Ok((train, held))
}

/// Replicated series with shared vertex set and grid step.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub series: Vec<MultivariateTimeSeries>,
    pub perturbations: BTreeMap<usize, Vec<PerturbationRecord>>,
    pub ground_truth: Option<WeightedDigraph>,
    pub prior: Option<WeightedDigraph>,
    /// Free-form provenance written to `meta.json`.
    pub info: serde_json::Value,
}

impl Dataset {
    pub fn new(
        series: Vec<MultivariateTimeSeries>,
        perturbations: BTreeMap<usize, Vec<PerturbationRecord>>,
        ground_truth: Option<WeightedDigraph>,
        prior: Option<WeightedDigraph>,
    ) -> Result<Self> {
        let d = Self {
            series,
            perturbations,
            ground_truth,
            prior,
            info: serde_json::Value::Null,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_info(mut self, info: serde_json::Value) -> Self {
        self.info = info;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .series
            .first()
            .ok_or_else(|| Error::EmptyInput("dataset has no series".into()))?;
        let n = first.n_vertices();
        let dt = first.dt();
        for (k, s) in self.series.iter().enumerate() {
            if s.n_vertices() != n {
                return Err(Error::SizeMismatch(format!(
                    "series {k} has {} vertices, expected {n}",
                    s.n_vertices()
                )));
            }
            if s.len() > 1 && first.len() > 1 && (s.dt() - dt).abs() > GRID_RTOL * dt.abs() {
                return Err(Error::Validation(format!(
                    "series {k} has step {}, expected {dt}",
                    s.dt()
                )));
            }
        }
        for (&k, records) in &self.perturbations {
            let s = self.series.get(k).ok_or_else(|| {
                Error::Validation(format!("perturbation references missing series {k}"))
            })?;
            for r in records {
                if r.vertex >= n {
                    return Err(Error::Validation(format!(
                        "perturbation vertex {} out of range",
                        r.vertex
                    )));
                }
                s.index_of(r.time)?;
            }
        }
        for g in self.ground_truth.iter().chain(self.prior.iter()) {
            if g.n() != n {
                return Err(Error::SizeMismatch(format!(
                    "graph has {} vertices, series have {n}",
                    g.n()
                )));
            }
        }
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.series[0].n_vertices()
    }

    pub fn dt(&self) -> f64 {
        self.series[0].dt()
    }

    pub fn is_perturbed(&self, k: usize) -> bool {
        self.perturbations.get(&k).is_some_and(|r| !r.is_empty())
    }

    /// Index of the first series without perturbations (falls back to 0).
    pub fn base_index(&self) -> usize {
        (0..self.series.len())
            .find(|&k| !self.is_perturbed(k))
            .unwrap_or(0)
    }

    pub fn base(&self) -> &MultivariateTimeSeries {
        &self.series[self.base_index()]
    }

    /// Copy keeping only unperturbed series.
    pub fn without_perturbations(&self) -> Dataset {
        let keep: Vec<usize> = (0..self.series.len())
            .filter(|&k| !self.is_perturbed(k))
            .collect();
        Dataset {
            series: keep.iter().map(|&k| self.series[k].clone()).collect(),
            perturbations: BTreeMap::new(),
            ground_truth: self.ground_truth.clone(),
            prior: self.prior.clone(),
            info: self.info.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PerturbationEntry {
    series: usize,
    #[serde(flatten)]
    record: PerturbationRecord,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    dt: f64,
    vertices: Vec<String>,
    #[serde(default)]
    ground_truth_edges: Option<Vec<[usize; 2]>>,
    #[serde(default)]
    perturbations: Vec<PerturbationEntry>,
    #[serde(default)]
    prior: Option<WeightedDigraph>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    info: serde_json::Value,
}

fn series_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("timeseries_{k}.csv"))
}

/// Writes `timeseries_<k>.csv` files and `meta.json` into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (k, s) in dataset.series.iter().enumerate() {
        let mut out = String::from("time");
        for v in 0..s.n_vertices() {
            out.push_str(&format!(",v{v}"));
        }
        out.push('\n');
        for (row, &t) in s.times.iter().enumerate() {
            out.push_str(&fmt_f64(t));
            for v in 0..s.n_vertices() {
                out.push(',');
                out.push_str(&fmt_f64(s.values[(row, v)]));
            }
            out.push('\n');
        }
        fs::write(series_path(dir, k), out)?;
    }
    let meta = Meta {
        dt: dataset.dt(),
        vertices: dataset.series[0].vertex_names.clone(),
        ground_truth_edges: dataset
            .ground_truth
            .as_ref()
            .map(|g| g.edges().map(|e| [e.src, e.dst]).collect()),
        perturbations: dataset
            .perturbations
            .iter()
            .flat_map(|(&series, rs)| {
                rs.iter().map(move |r| PerturbationEntry {
                    series,
                    record: r.clone(),
                })
            })
            .collect(),
        prior: dataset.prior.clone(),
        info: dataset.info.clone(),
    };
    fs::write(dir.join("meta.json"), to_json_string(&meta)?)?;
    Ok(())
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_series(path: &Path, names: &[String]) -> Result<MultivariateTimeSeries> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"time") {
        return Err(parse_err(path, 1, "header must start with `time`"));
    }
    let n = cols.len() - 1;
    if n != names.len() {
        return Err(parse_err(
            path,
            1,
            format!("{n} value columns but meta.json lists {} vertices", names.len()),
        ));
    }
    let mut times = Vec::new();
    let mut flat = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n + 1 {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected {} fields, found {}", n + 1, fields.len()),
            ));
        }
        let mut parsed = fields.iter().map(|f| f.trim().parse::<f64>());
        let t = parsed
            .next()
            .expect("non-empty row")
            .map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        times.push(t);
        for f in parsed {
            flat.push(f.map_err(|e| parse_err(path, i + 1, e.to_string()))?);
        }
    }
    let values = DMatrix::from_row_slice(times.len(), n, &flat);
    MultivariateTimeSeries::new(times, values, names.to_vec())
        .map_err(|e| parse_err(path, 0, e.to_string()))
}

/// Reads a directory written by [`save_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::MissingFile(meta_path));
    }
    let meta: Meta = serde_json::from_str(&fs::read_to_string(&meta_path)?).map_err(|e| {
        parse_err(&meta_path, e.line(), e.to_string())
    })?;
    let mut series = Vec::new();
    while series_path(dir, series.len()).exists() {
        let path = series_path(dir, series.len());
        series.push(read_series(&path, &meta.vertices)?);
    }
    if series.is_empty() {
        return Err(Error::MissingFile(series_path(dir, 0)));
    }
    let n = meta.vertices.len();
    let ground_truth = meta
        .ground_truth_edges
        .map(|pairs| {
            let pairs: Vec<(usize, usize)> = pairs.into_iter().map(|[s, d]| (s, d)).collect();
            WeightedDigraph::from_pairs(n, &pairs)
        })
        .transpose()
        .map_err(|e| parse_err(&meta_path, 0, e.to_string()))?;
    let mut perturbations: BTreeMap<usize, Vec<PerturbationRecord>> = BTreeMap::new();
    for p in meta.perturbations {
        perturbations.entry(p.series).or_default().push(p.record);
    }
    let d = Dataset::new(series, perturbations, ground_truth, meta.prior)?;
    Ok(d.with_info(meta.info))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(len: usize, n: usize) -> MultivariateTimeSeries {
        let values = DMatrix::from_fn(len, n, |t, v| t as f64 + 10.0 * v as f64);
        MultivariateTimeSeries::from_grid(0.0, 1.0, values).unwrap()
    }

    #[test]
    fn lag_window_examples() {
        let s = ramp(10, 2);
        let w = lag_window(&s, 5.0, 1, None).unwrap();
        assert_eq!(w.nrows(), 1);
        assert_eq!(w[(0, 0)], 5.0);
        let w = lag_window(&s, 5.0, 3, None).unwrap();
        assert_eq!(w.column(0).iter().copied().collect::<Vec<_>>(), vec![5.0, 4.0, 3.0]);
        assert_eq!(w[(2, 1)], 13.0);
    }

    #[test]
    fn lag_window_pads_with_first_observation() {
        let s = ramp(10, 1);
        let w = lag_window(&s, 0.0, 4, None).unwrap();
        assert!(w.iter().all(|&x| x == 0.0));
        let w = lag_window(&s, 1.0, 4, None).unwrap();
        assert_eq!(w.column(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn lag_window_constant_series_and_history() {
        let s = MultivariateTimeSeries::from_grid(0.0, 0.5, DMatrix::from_element(6, 2, 3.0))
            .unwrap();
        let w = lag_window(&s, 2.0, 3, None).unwrap();
        assert!(w.iter().all(|&x| x == 3.0));
        let mut h = DMatrix::from_element(3, 2, f64::NAN);
        h[(0, 1)] = -1.0;
        let w = lag_window(&s, 2.0, 3, Some(&h)).unwrap();
        assert_eq!(w[(0, 1)], -1.0);
        assert_eq!(w[(0, 0)], 3.0);
        assert!(matches!(lag_window(&s, 0.7, 3, None), Err(Error::OffGrid { .. })));
    }

    #[test]
    fn perturbation_changes_one_cell() {
        let s = ramp(8, 3);
        let same = apply_perturbation(&s, &PerturbationRecord::additive(1, 3.0, 0.0)).unwrap();
        assert_eq!(same, s);
        let p = apply_perturbation(&s, &PerturbationRecord::additive(1, 3.0, 0.5)).unwrap();
        let diffs: Vec<_> = (0..8)
            .flat_map(|t| (0..3).map(move |v| (t, v)))
            .filter(|&(t, v)| p.value(t, v) != s.value(t, v))
            .collect();
        assert_eq!(diffs, vec![(3, 1)]);
        assert_eq!(p.value(3, 1) - s.value(3, 1), 0.5);
        let q = apply_perturbation(&p, &PerturbationRecord::additive(2, 6.0, -1.0)).unwrap();
        let count = (0..8)
            .flat_map(|t| (0..3).map(move |v| (t, v)))
            .filter(|&(t, v)| q.value(t, v) != s.value(t, v))
            .count();
        assert_eq!(count, 2);
        assert!(apply_perturbation(&s, &PerturbationRecord::additive(0, 2.5, 1.0)).is_err());
    }

    #[test]
    fn holdout_split_counts_and_determinism() {
        let (train, held) = split_holdout(10, 0.2, 7).unwrap();
        assert_eq!(held.len(), 2);
        assert_eq!(train.len(), 8);
        assert!(!held.contains(&0) && !held.contains(&9));
        assert_eq!(split_holdout(10, 0.2, 7).unwrap(), (train, held));
        let (train, held) = split_holdout(10, 0.05, 1).unwrap();
        assert!(held.is_empty());
        assert_eq!(train, (0..10).collect::<Vec<_>>());
        assert!(split_holdout(3, 0.5, 0).is_err());
        assert!(split_holdout(10, 0.95, 0).is_err());
        assert!(split_holdout(10, 0.0, 0).is_err());
    }

    #[test]
    fn rejects_irregular_grid() {
        let v = DMatrix::zeros(3, 1);
        let err = MultivariateTimeSeries::new(vec![0.0, 1.0, 2.5], v.clone(), vec!["a".into()]);
        assert!(matches!(err, Err(Error::Validation(_))));
        let err = MultivariateTimeSeries::new(vec![0.0, 2.0, 1.0], v, vec!["a".into()]);
        assert!(matches!(err, Err(Error::Validation(_))));
    }
}
