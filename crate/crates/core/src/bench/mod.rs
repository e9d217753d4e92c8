//! Benchmark harness: simulate systems over seeds, run the attention model
//! and the baselines on each dataset, score graphs against ground truth and
//! tabulate GED.

mod config;
mod infer;
mod report;

pub use config::{BenchmarkConfig, Method, MethodsConfig, ReportConfig, SystemSpec, MAX_NOISE_LEVELS};
pub use infer::{build_prior, held_out_scores, infer, infer_with_prior, HeldOutScores, Inference, PriorSource, RitiniMethodConfig};
pub use report::{Aggregate, CellResult, InferenceReport};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::baselines::{run_baseline, scores_to_csv};
use crate::data::{save_dataset, Dataset, PerturbationRecord};
use crate::error::{Error, Result};
use crate::graph::{graph_edit_distance, precision_recall, WeightedDigraph};
use crate::sim::{
    simulate_dmf, simulate_five_node, simulate_iaf_network, simulate_wilson_cowan, SimulatorConfig, SystemKind,
};

/// Perturbation records for replicate group `k`: vertices cycle from
/// `seed + k`, all at the middle sample.
fn perturbation_records(spec: &SystemSpec, n: usize, seed: u64, k: usize, grid: (f64, usize)) -> Vec<PerturbationRecord> {
    let (dt, len) = grid;
    let time = (len / 2) as f64 * dt;
    (0..spec.perturbations)
        .map(|r| {
            let vertex = ((seed as usize).wrapping_add(k + r)) % n;
            PerturbationRecord::additive(vertex, time, spec.perturbation_epsilon)
        })
        .collect()
}

fn simulate_group(spec: &SystemSpec, seed: u64, k: usize, noise: Option<f64>) -> Result<Dataset> {
    let mut sc = SimulatorConfig::new(spec.system);
    sc.nodes = spec.nodes;
    sc.steps = spec.steps;
    sc.dt = spec.dt;
    sc.noise = noise;
    sc.edge_probability = spec.edge_probability;
    sc.seed = seed;
    let noise_seed = seed.wrapping_mul(MAX_NOISE_LEVELS as u64).wrapping_add(k as u64);
    match spec.system {
        SystemKind::FiveNode => {
            let mut c = sc.five_node();
            c.seed = noise_seed;
            if let Some(init) = spec.initial {
                c.initial = init;
            }
            c.perturbations = perturbation_records(spec, 5, seed, k, (1.0, c.steps));
            simulate_five_node(&c)
        }
        SystemKind::WilsonCowan => {
            let mut c = sc.wilson_cowan()?;
            c.seed = noise_seed;
            c.perturbations = perturbation_records(spec, c.n(), seed, k, (c.sample_dt(), c.steps));
            simulate_wilson_cowan(&c)
        }
        SystemKind::Iaf => {
            let mut c = sc.iaf()?;
            c.seed = noise_seed;
            c.perturbations = perturbation_records(spec, c.n(), seed, k, (c.sample_ms, c.samples()));
            simulate_iaf_network(&c)
        }
        SystemKind::Dmf => {
            let mut c = sc.dmf()?;
            c.seed = noise_seed;
            c.perturbations = perturbation_records(spec, c.n(), seed, k, (c.sample_dt(), c.steps));
            simulate_dmf(&c)
        }
    }
}

/// The pooled dataset of one system and seed. Network-based systems draw
/// their graph from `seed`; replicate groups differ only in noise.
pub fn simulate_system(spec: &SystemSpec, seed: u64) -> Result<Dataset> {
    let levels: Vec<Option<f64>> = if spec.noise.is_empty() {
        vec![None]
    } else {
        spec.noise.iter().copied().map(Some).collect()
    };
    let mut series = Vec::new();
    let mut perturbations = BTreeMap::new();
    let mut truth = None;
    for (k, &noise) in levels.iter().enumerate() {
        let d = simulate_group(spec, seed, k, noise)?;
        let offset = series.len();
        for (i, recs) in d.perturbations {
            perturbations.insert(offset + i, recs);
        }
        series.extend(d.series);
        truth = d.ground_truth;
    }
    let info = serde_json::json!({
        "system": spec.system,
        "seed": seed,
        "noise": spec.noise,
        "steps": spec.steps,
        "perturbations_per_level": spec.perturbations,
        "perturbation_epsilon": spec.perturbation_epsilon,
    });
    Ok(Dataset::new(series, perturbations, truth, None)?.with_info(info))
}

/// Graph-vs-truth metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Ged,
    Precision,
    Recall,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ged" => Ok(Self::Ged),
            "precision" => Ok(Self::Precision),
            "recall" => Ok(Self::Recall),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

pub fn evaluate_graphs(pred: &WeightedDigraph, truth: &WeightedDigraph, metric: Metric) -> Result<f64> {
    match metric {
        Metric::Ged => Ok(graph_edit_distance(pred, truth)? as f64),
        Metric::Precision => {
            if pred.without_self_loops().is_empty() {
                log::warn!("precision of an empty prediction is reported as 0");
            }
            Ok(precision_recall(pred, truth)?.0)
        }
        Metric::Recall => Ok(precision_recall(pred, truth)?.1),
    }
}

/// [`evaluate_graphs`] on two graph JSON files.
pub fn evaluate(pred: impl AsRef<Path>, truth: impl AsRef<Path>, metric: Metric) -> Result<f64> {
    evaluate_graphs(&WeightedDigraph::load(pred)?, &WeightedDigraph::load(truth)?, metric)
}

struct Scored {
    graph: WeightedDigraph,
    held_out: Option<HeldOutScores>,
}

fn run_method(
    cfg: &BenchmarkConfig,
    system: &str,
    method: Method,
    seed: u64,
    dataset: &Dataset,
    dir: Option<&Path>,
) -> Result<Scored> {
    if let Some(b) = method.baseline() {
        let (graph, scores) = run_baseline(b, dataset, &cfg.methods.baselines)?;
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
            graph.save(d.join("graph.json"))?;
            fs::write(d.join("scores.csv"), scores_to_csv(&scores))?;
        }
        return Ok(Scored { graph, held_out: None });
    }
    let rc = cfg.ritini_for(system)?;
    let data = match method {
        Method::RitiniNoPerturb => dataset.without_perturbations(),
        _ => dataset.clone(),
    };
    let inf = infer(&data, &rc, seed)?;
    if let Some(d) = dir {
        inf.write(&data, d)?;
        inf.graphs.static_graph.save(d.join("graph.json"))?;
    }
    Ok(Scored {
        graph: inf.graphs.static_graph,
        held_out: inf.scores,
    })
}

fn score_cell(
    cfg: &BenchmarkConfig,
    system: &str,
    method: Method,
    seed: u64,
    dataset: &Result<Dataset>,
    dir: Option<PathBuf>,
) -> CellResult {
    let start = Instant::now();
    let outcome = dataset
        .as_ref()
        .map_err(|e| Error::Validation(format!("simulation failed: {e}")))
        .and_then(|d| {
            let s = run_method(cfg, system, method, seed, d, dir.as_deref())?;
            let metrics = match &d.ground_truth {
                Some(t) => {
                    let (p, r) = precision_recall(&s.graph, t)?;
                    Some((graph_edit_distance(&s.graph, t)?, p, r))
                }
                None => None,
            };
            Ok((s, metrics))
        });
    let mut cell = CellResult {
        system: system.to_string(),
        method: method.name().to_string(),
        seed,
        error: None,
        ged: None,
        precision: None,
        recall: None,
        edges: None,
        held_out: None,
        wall_seconds: 0.0,
    };
    match outcome {
        Ok((s, metrics)) => {
            cell.edges = Some(s.graph.without_self_loops().num_edges());
            cell.held_out = s.held_out;
            if let Some((g, p, r)) = metrics {
                cell.ged = Some(g);
                cell.precision = Some(p);
                cell.recall = Some(r);
            }
        }
        Err(e) => {
            log::warn!("{system} / {} / seed {seed} failed: {e}", method.name());
            cell.error = Some(e.to_string());
        }
    }
    cell.wall_seconds = start.elapsed().as_secs_f64();
    log::info!(
        "{system} / {} / seed {seed}: ged {:?} in {:.1}s",
        method.name(),
        cell.ged,
        cell.wall_seconds
    );
    cell
}

/// Runs every (system, seed, method) cell. A failing cell is recorded and
/// the rest continue. With `out` and `report.artifacts`, per-run datasets,
/// graphs and trajectories go under `out/<system>/seed-<k>/`; with `out`,
/// `report.csv` and `report.json` are written there.
pub fn run_benchmark(cfg: &BenchmarkConfig, out: Option<&Path>) -> Result<InferenceReport> {
    cfg.validate()?;
    let methods = cfg.methods();
    let mut jobs = Vec::new();
    let mut datasets = Vec::new();
    for (name, spec) in &cfg.systems {
        for &seed in &spec.seeds {
            let d = simulate_system(spec, seed);
            let run_dir = out.map(|o| o.join(name).join(format!("seed-{seed}")));
            if let (Ok(d), Some(dir), true) = (&d, &run_dir, cfg.report.artifacts) {
                save_dataset(d, dir.join("data"))?;
            }
            datasets.push(d);
            let di = datasets.len() - 1;
            for &m in &methods {
                let dir = run_dir
                    .as_ref()
                    .filter(|_| cfg.report.artifacts)
                    .map(|r| r.join(m.name()));
                jobs.push((name.as_str(), m, seed, di, dir));
            }
        }
    }
    let cells: Vec<CellResult> = jobs
        .into_par_iter()
        .map(|(system, m, seed, di, dir)| score_cell(cfg, system, m, seed, &datasets[di], dir))
        .collect();

    let mut resolved = serde_json::Map::new();
    for name in cfg.systems.keys() {
        resolved.insert(name.clone(), serde_json::to_value(cfg.ritini_for(name)?)?);
    }
    let settings = serde_json::json!({ "config": cfg, "ritini": resolved });
    let report = InferenceReport::new(
        cfg.systems.keys().cloned().collect(),
        methods.iter().map(|m| m.name().to_string()).collect(),
        cells,
        settings,
    );
    if let Some(o) = out {
        report.write(o)?;
    }
    Ok(report)
}
