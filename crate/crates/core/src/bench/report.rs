use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::infer::HeldOutScores;
use crate::error::Result;
use crate::format::to_json_string;

/// Outcome of one (system, method, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub system: String,
    pub method: String,
    pub seed: u64,
    /// Failure message; the metric fields are then absent.
    pub error: Option<String>,
    pub ged: Option<usize>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub edges: Option<usize>,
    pub held_out: Option<HeldOutScores>,
    pub wall_seconds: f64,
}

impl CellResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// GED summary of one (system, method) pair over its seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub system: String,
    pub method: String,
    pub runs: usize,
    pub failures: usize,
    pub mean_ged: Option<f64>,
    /// Sample standard deviation; absent below two successful runs.
    pub sd_ged: Option<f64>,
}

impl Aggregate {
    pub fn from_cells(system: &str, method: &str, cells: &[CellResult]) -> Self {
        let mine: Vec<&CellResult> = cells
            .iter()
            .filter(|c| c.system == system && c.method == method)
            .collect();
        let geds: Vec<f64> = mine.iter().filter_map(|c| c.ged).map(|g| g as f64).collect();
        let k = geds.len() as f64;
        let mean = (!geds.is_empty()).then(|| geds.iter().sum::<f64>() / k);
        let sd = (geds.len() >= 2).then(|| {
            let m = mean.expect("nonempty");
            (geds.iter().map(|g| (g - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        });
        Self {
            system: system.to_string(),
            method: method.to_string(),
            runs: mine.len(),
            failures: mine.iter().filter(|c| c.failed()).count(),
            mean_ged: mean,
            sd_ged: sd,
        }
    }

    /// `mean ± sd`, `mean` alone with one run, `failed` with none.
    pub fn cell_text(&self) -> String {
        let mut s = match (self.mean_ged, self.sd_ged) {
            (Some(m), Some(sd)) => format!("{m:.2} ± {sd:.2}"),
            (Some(m), None) => format!("{m:.2}"),
            (None, _) => return "failed".into(),
        };
        if self.failures > 0 {
            s.push_str(&format!(" ({} failed)", self.failures));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub systems: Vec<String>,
    pub methods: Vec<String>,
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
    /// The configuration that produced the report, with resolved per-system
    /// model settings.
    pub settings: serde_json::Value,
}

impl InferenceReport {
    pub fn new(systems: Vec<String>, methods: Vec<String>, cells: Vec<CellResult>, settings: serde_json::Value) -> Self {
        let aggregates = systems
            .iter()
            .flat_map(|s| methods.iter().map(move |m| (s, m)))
            .map(|(s, m)| Aggregate::from_cells(s, m, &cells))
            .collect();
        Self {
            systems,
            methods,
            cells,
            aggregates,
            settings,
        }
    }

    pub fn aggregate(&self, system: &str, method: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.system == system && a.method == method)
    }

    pub fn cells_for<'a>(&'a self, system: &'a str, method: &'a str) -> impl Iterator<Item = &'a CellResult> + 'a {
        self.cells.iter().filter(move |c| c.system == system && c.method == method)
    }

    /// Rows are systems, columns methods, cells the GED summary. Contains
    /// no timings, so equal inputs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("system");
        for m in &self.methods {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for s in &self.systems {
            out.push_str(s);
            for m in &self.methods {
                out.push(',');
                out.push_str(&self.aggregate(s, m).map(Aggregate::cell_text).unwrap_or_default());
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        to_json_string(self).expect("report serializes")
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), self.to_csv())?;
        fs::write(dir.join("report.json"), self.to_json())?;
        Ok(())
    }
}
