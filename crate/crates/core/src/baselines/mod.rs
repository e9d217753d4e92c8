//! Classical causal-discovery baselines producing graphs comparable with
//! the attention model's output.

mod embed;
mod entropy;
mod granger;
mod info;
mod pc;
mod significance;

pub use entropy::{
    gaussian_conditional_entropy, gaussian_entropy_from_cov, knn_conditional_entropy, knn_entropy,
    EntropyEstimatorConfig, EstimatorKind,
};
pub use granger::{granger_graph, granger_graph_scored, granger_test, GrangerConfig, GrangerTest};
pub use info::{mmi_graph_scored, mte_graph_scored, oce_graph_scored, InfoConfig};
pub use pc::{fisher_z_pvalue, partial_correlation, pc_analyze, pc_analyze_samples, pc_graph, PcConfig, PcGraph};
pub use significance::{permutation_significance, SignificanceConfig};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::graph::WeightedDigraph;

/// One tested ordered pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub src: usize,
    pub dst: usize,
    pub score: f64,
    pub p_value: Option<f64>,
    pub selected: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Gc,
    Oce,
    Pc,
    Mte,
    Mmi,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 5] = [Self::Gc, Self::Oce, Self::Pc, Self::Mte, Self::Mmi];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gc => "gc",
            Self::Oce => "oce",
            Self::Pc => "pc",
            Self::Mte => "mte",
            Self::Mmi => "mmi",
        }
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub granger: GrangerConfig,
    pub info: InfoConfig,
    pub pc: PcConfig,
}

pub fn mmi_graph(dataset: &Dataset, cfg: &InfoConfig) -> Result<WeightedDigraph> {
    Ok(mmi_graph_scored(dataset, cfg)?.0)
}

pub fn mte_graph(dataset: &Dataset, cfg: &InfoConfig) -> Result<WeightedDigraph> {
    Ok(mte_graph_scored(dataset, cfg)?.0)
}

pub fn oce_graph(dataset: &Dataset, cfg: &InfoConfig) -> Result<WeightedDigraph> {
    Ok(oce_graph_scored(dataset, cfg)?.0)
}

/// Runs one baseline, returning its graph and per-pair score table.
pub fn run_baseline(
    method: BaselineMethod,
    dataset: &Dataset,
    cfg: &BaselineConfig,
) -> Result<(WeightedDigraph, Vec<EdgeScore>)> {
    match method {
        BaselineMethod::Gc => granger_graph_scored(dataset, &cfg.granger),
        BaselineMethod::Oce => oce_graph_scored(dataset, &cfg.info),
        BaselineMethod::Mte => mte_graph_scored(dataset, &cfg.info),
        BaselineMethod::Mmi => mmi_graph_scored(dataset, &cfg.info),
        BaselineMethod::Pc => {
            let g = pc_analyze(dataset, &cfg.pc)?;
            let graph = g.to_digraph();
            let scores = graph
                .edges()
                .map(|e| EdgeScore {
                    src: e.src,
                    dst: e.dst,
                    score: e.weight,
                    p_value: None,
                    selected: true,
                })
                .collect();
            Ok((graph, scores))
        }
    }
}

/// CSV table `src,dst,score,p_value,selected`.
pub fn scores_to_csv(scores: &[EdgeScore]) -> String {
    let mut out = String::from("src,dst,score,p_value,selected\n");
    for s in scores {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.src,
            s.dst,
            fmt_f64(s.score),
            s.p_value.map(fmt_f64).unwrap_or_default(),
            s.selected
        ));
    }
    out
}
