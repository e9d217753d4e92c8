use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::infer::RitiniMethodConfig;
use crate::baselines::{BaselineConfig, BaselineMethod};
use crate::error::{Error, Result};
use crate::sim::SystemKind;

/// A benchmark column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ritini,
    /// Attention model trained without the perturbed replicates.
    RitiniNoPerturb,
    Gc,
    Oce,
    Pc,
    Mte,
    Mmi,
}

impl Method {
    pub const ALL: [Method; 6] = [Self::Ritini, Self::Gc, Self::Oce, Self::Pc, Self::Mte, Self::Mmi];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ritini => "ritini",
            Self::RitiniNoPerturb => "ritini-noperturb",
            Self::Gc => "gc",
            Self::Oce => "oce",
            Self::Pc => "pc",
            Self::Mte => "mte",
            Self::Mmi => "mmi",
        }
    }

    pub fn baseline(self) -> Option<BaselineMethod> {
        match self {
            Self::Gc => Some(BaselineMethod::Gc),
            Self::Oce => Some(BaselineMethod::Oce),
            Self::Pc => Some(BaselineMethod::Pc),
            Self::Mte => Some(BaselineMethod::Mte),
            Self::Mmi => Some(BaselineMethod::Mmi),
            Self::Ritini | Self::RitiniNoPerturb => None,
        }
    }
}

/// One `[systems.<name>]` table. Every seed simulates one base series per
/// noise level plus `perturbations` perturbed replicates of it, all pooled
/// into a single dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSpec {
    pub system: SystemKind,
    pub nodes: usize,
    pub steps: Option<usize>,
    pub dt: Option<f64>,
    pub edge_probability: f64,
    /// One replicate group per level; empty uses the simulator default.
    pub noise: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Perturbed replicates per noise level.
    pub perturbations: usize,
    pub perturbation_epsilon: f64,
    /// Five-node only: values held over the first three steps.
    pub initial: Option<[f64; 5]>,
    /// Overrides merged over `[methods.ritini]` for this system.
    pub ritini: toml::Table,
}

impl Default for SystemSpec {
    fn default() -> Self {
        Self {
            system: SystemKind::FiveNode,
            nodes: 5,
            steps: None,
            dt: None,
            edge_probability: 0.1,
            noise: Vec::new(),
            seeds: (0..5).collect(),
            perturbations: 1,
            perturbation_epsilon: 0.5,
            initial: None,
            ritini: toml::Table::new(),
        }
    }
}

/// Replicate `k` of seed `s` draws its noise from simulator seed
/// `10 s + k`, so at most this many noise levels are allowed.
pub const MAX_NOISE_LEVELS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodsConfig {
    pub run: Vec<Method>,
    pub ritini: RitiniMethodConfig,
    pub baselines: BaselineConfig,
}

impl Default for MethodsConfig {
    fn default() -> Self {
        Self {
            run: Method::ALL.to_vec(),
            ritini: RitiniMethodConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Adds the `ritini-noperturb` column.
    pub ablation: bool,
    /// Lifts the desk-scale size caps.
    pub large: bool,
    /// Write datasets, graphs and trajectories per run.
    pub artifacts: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            ablation: false,
            large: false,
            artifacts: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub systems: BTreeMap<String, SystemSpec>,
    #[serde(default)]
    pub methods: MethodsConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

const MAX_NODES: usize = 50;
const MAX_NODES_LARGE: usize = 75;
const MAX_STEPS: usize = 2000;

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

impl BenchmarkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        Self::from_toml(&text)
    }

    /// Columns in report order.
    pub fn methods(&self) -> Vec<Method> {
        let mut m = self.methods.run.clone();
        m.sort();
        m.dedup();
        if self.report.ablation && m.contains(&Method::Ritini) && !m.contains(&Method::RitiniNoPerturb) {
            let at = m.iter().position(|&x| x == Method::Ritini).expect("present") + 1;
            m.insert(at, Method::RitiniNoPerturb);
        }
        m
    }

    /// `[methods.ritini]` with the system's overrides applied.
    pub fn ritini_for(&self, system: &str) -> Result<RitiniMethodConfig> {
        let spec = self
            .systems
            .get(system)
            .ok_or_else(|| Error::Config(format!("unknown system `{system}`")))?;
        if spec.ritini.is_empty() {
            return Ok(self.methods.ritini);
        }
        let mut table = toml::Table::try_from(self.methods.ritini).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut table, &spec.ritini);
        let cfg: RitiniMethodConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("systems.{system}.ritini: {e}")))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.systems.is_empty() {
            return Err(Error::Config("no systems configured".into()));
        }
        if self.methods.run.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        let cap = if self.report.large { MAX_NODES_LARGE } else { MAX_NODES };
        for (name, s) in &self.systems {
            if s.seeds.is_empty() {
                return Err(Error::Config(format!("system `{name}` needs at least one seed")));
            }
            let nodes = if s.system == SystemKind::FiveNode { 5 } else { s.nodes };
            if nodes > cap {
                return Err(Error::Config(format!(
                    "system `{name}` has {nodes} vertices, cap is {cap}{}",
                    if self.report.large { "" } else { " (use --large)" }
                )));
            }
            if s.steps.is_some_and(|t| t > MAX_STEPS) {
                return Err(Error::Config(format!("system `{name}` exceeds {MAX_STEPS} steps")));
            }
            if s.noise.len() > MAX_NOISE_LEVELS {
                return Err(Error::Config(format!(
                    "system `{name}` has more than {MAX_NOISE_LEVELS} noise levels"
                )));
            }
            if s.noise.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                return Err(Error::Config(format!("system `{name}` has a bad noise level")));
            }
            if s.initial.is_some() && s.system != SystemKind::FiveNode {
                return Err(Error::Config(format!("`initial` applies only to five-node (system `{name}`)")));
            }
            self.ritini_for(name)?.validate()?;
        }
        self.methods.ritini.validate()
    }
}
