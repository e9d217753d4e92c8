use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    simulate_dmf, simulate_five_node, simulate_iaf_network, simulate_wilson_cowan, DmfConfig,
    FiveNodeConfig, IafConfig, WilsonCowanConfig,
};
use crate::data::{Dataset, PerturbationRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    FiveNode,
    WilsonCowan,
    Iaf,
    Dmf,
}

impl std::str::FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "five-node" => Ok(Self::FiveNode),
            "wilson-cowan" => Ok(Self::WilsonCowan),
            "iaf" => Ok(Self::Iaf),
            "dmf" => Ok(Self::Dmf),
            other => Err(Error::Config(format!("unknown system `{other}`"))),
        }
    }
}

/// Compact simulator description; the network-based systems draw a random
/// graph from `nodes`, `edge_probability` and `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    pub system: SystemKind,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub noise: Option<f64>,
    #[serde(default = "default_edge_probability")]
    pub edge_probability: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub perturbations: Vec<PerturbationRecord>,
}

fn default_nodes() -> usize {
    5
}

fn default_edge_probability() -> f64 {
    0.1
}

/// TOML layout: one table per simulator type, e.g. `[five-node]` with
/// `steps = 200`; the table name selects the system.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulatorFile {
    #[serde(rename = "five-node")]
    five_node: Option<toml::Table>,
    #[serde(rename = "wilson-cowan")]
    wilson_cowan: Option<toml::Table>,
    iaf: Option<toml::Table>,
    dmf: Option<toml::Table>,
}

impl SimulatorConfig {
    pub fn new(system: SystemKind) -> Self {
        Self {
            system,
            nodes: default_nodes(),
            steps: None,
            dt: None,
            noise: None,
            edge_probability: default_edge_probability(),
            seed: 0,
            perturbations: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: SimulatorFile =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let tables = [
            (SystemKind::FiveNode, file.five_node),
            (SystemKind::WilsonCowan, file.wilson_cowan),
            (SystemKind::Iaf, file.iaf),
            (SystemKind::Dmf, file.dmf),
        ];
        let mut present = tables.into_iter().filter_map(|(k, t)| t.map(|t| (k, t)));
        let (kind, mut table) = present
            .next()
            .ok_or_else(|| Error::Config("no simulator table".into()))?;
        if present.next().is_some() {
            return Err(Error::Config("more than one simulator table".into()));
        }
        table.insert(
            "system".into(),
            toml::Value::String(serde_json::to_value(kind)?.as_str().unwrap_or_default().into()),
        );
        table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        Self::from_toml(&text)
    }

    pub fn five_node(&self) -> FiveNodeConfig {
        let mut c = FiveNodeConfig {
            seed: self.seed,
            perturbations: self.perturbations.clone(),
            ..Default::default()
        };
        if let Some(s) = self.steps {
            c.steps = s;
        }
        if let Some(s) = self.noise {
            c.noise_sigma = s;
        }
        c
    }

    pub fn wilson_cowan(&self) -> Result<WilsonCowanConfig> {
        let mut c = WilsonCowanConfig::random(self.nodes, self.edge_probability, self.seed)?;
        if let Some(s) = self.steps {
            c.steps = s;
        }
        if let Some(dt) = self.dt {
            c.dt = dt;
        }
        if let Some(s) = self.noise {
            c.noise_sigma = s;
        }
        c.perturbations = self.perturbations.clone();
        Ok(c)
    }

    pub fn iaf(&self) -> Result<IafConfig> {
        let mut c = IafConfig::random(self.nodes, self.edge_probability, self.seed)?;
        if let Some(s) = self.steps {
            c.duration = s as f64 * c.sample_ms;
        }
        if let Some(dt) = self.dt {
            c.dt = dt;
        }
        if let Some(s) = self.noise {
            c.noise_current = s;
        }
        c.perturbations = self.perturbations.clone();
        Ok(c)
    }

    pub fn dmf(&self) -> Result<DmfConfig> {
        let mut c = DmfConfig::random(self.nodes, self.edge_probability, self.seed)?;
        if let Some(s) = self.steps {
            c.steps = s;
        }
        if let Some(dt) = self.dt {
            c.dt = dt;
        }
        if let Some(s) = self.noise {
            c.sigma = s;
        }
        c.perturbations = self.perturbations.clone();
        Ok(c)
    }

    pub fn simulate(&self) -> Result<Dataset> {
        match self.system {
            SystemKind::FiveNode => simulate_five_node(&self.five_node()),
            SystemKind::WilsonCowan => simulate_wilson_cowan(&self.wilson_cowan()?),
            SystemKind::Iaf => simulate_iaf_network(&self.iaf()?),
            SystemKind::Dmf => simulate_dmf(&self.dmf()?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_one_table() {
        let c = SimulatorConfig::from_toml("[five-node]\nsteps = 50\nnoise = 0.1\nseed = 4\n").unwrap();
        assert_eq!(c.system, SystemKind::FiveNode);
        assert_eq!(c.five_node().steps, 50);
        assert_eq!(c.five_node().noise_sigma, 0.1);
        let d = c.simulate().unwrap();
        assert_eq!(d.series[0].len(), 50);
    }

    #[test]
    fn rejects_ambiguous_or_unknown() {
        assert!(SimulatorConfig::from_toml("[iaf]\n[dmf]\n").is_err());
        assert!(SimulatorConfig::from_toml("[iaf]\nbogus = 1\n").is_err());
        assert!(SimulatorConfig::from_toml("").is_err());
    }
}
