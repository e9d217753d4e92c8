use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Architecture sizes and initialization range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of lags `L`, covering `{0, dt, .., (L-1) dt}`.
    pub lags: usize,
    /// Projection width `d`.
    pub hidden: usize,
    pub attention_hidden: usize,
    pub dynamics_hidden: usize,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lags: 4,
            hidden: 16,
            attention_hidden: 16,
            dynamics_hidden: 16,
            init_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lags == 0 || self.hidden == 0 || self.attention_hidden == 0 || self.dynamics_hidden == 0 {
            return Err(Error::Config("lags and layer widths must be at least 1".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!("bad init_scale {}", self.init_scale)));
        }
        Ok(())
    }
}

// Storage order; `BoundParams::from_vars` relies on it.
pub(crate) const NAMES: [&str; 11] = [
    "projection",
    "lag_logits",
    "att_target",
    "att_source",
    "att_bias",
    "att_out",
    "dyn_in",
    "dyn_time",
    "dyn_bias",
    "dyn_out",
    "dyn_out_bias",
];

/// Learnable arrays of the attention graph ODE.
///
/// `projection` is `d x 1` (scalar vertex features). The attention network
/// scores the pair window `[X_i(t - δ)]_δ ++ [X_j(t - δ)]_δ` through
/// `att_target`/`att_source` (each `L x h_a`, together the first layer),
/// `att_bias` and `att_out`. The dynamics network maps `(g', t)` through
/// `dyn_in` (`d x h_f`), `dyn_time` (`1 x h_f`), `dyn_bias`, `dyn_out`,
/// `dyn_out_bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub store: ParameterStore,
}

impl ModelParameters {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let ModelConfig {
            lags: l,
            hidden: d,
            attention_hidden: ha,
            dynamics_hidden: hf,
            init_scale: s,
        } = config;
        let shapes = [
            (d, 1),
            (1, l),
            (l, ha),
            (l, ha),
            (1, ha),
            (ha, 1),
            (d, hf),
            (1, hf),
            (1, hf),
            (hf, 1),
            (1, 1),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for (name, (r, c)) in NAMES.iter().zip(shapes) {
            let t = Tensor::from_fn(r, c, |_, _| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 });
            store.insert(*name, t)?;
        }
        Ok(Self { config, store })
    }

    /// Rebuilds from a store, checking names and shapes against `config`.
    pub fn from_store(config: ModelConfig, store: ParameterStore) -> Result<Self> {
        let reference = Self::init(ModelConfig { init_scale: 0.0, ..config }, 0)?;
        if store.names() != reference.store.names() {
            return Err(Error::Validation(format!(
                "parameter names {:?} do not match the architecture",
                store.names()
            )));
        }
        for (i, name) in NAMES.iter().enumerate() {
            if store.value(i).shape() != reference.store.value(i).shape() {
                return Err(Error::Validation(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    store.value(i).shape(),
                    reference.store.value(i).shape()
                )));
            }
        }
        Ok(Self { config, store })
    }

    pub fn lags(&self) -> usize {
        self.config.lags
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.store.get(name).expect("parameter present by construction")
    }

    /// Temporal attention `l = softmax(lag_logits)`.
    pub fn lag_weights(&self) -> Vec<f64> {
        softmax(self.get("lag_logits").data())
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Parameters as tape nodes, with the derived views the forward pass uses.
pub(crate) struct BoundParams {
    pub leaves: Vec<Var>,
    /// `1 x d`.
    pub projection_t: Var,
    /// `L x 1`, sums to one.
    pub lag_col: Var,
    pub att_target: Var,
    pub att_source: Var,
    pub att_bias: Var,
    pub att_out: Var,
    /// `[W^T dyn_in; dyn_time]`, `2 x h_f`.
    pub dyn_first: Var,
    pub dyn_bias: Var,
    pub dyn_out: Var,
    pub dyn_out_bias: Var,
}

impl BoundParams {
    pub fn bind(tape: &Tape, params: &ModelParameters, trainable: bool) -> Result<Self> {
        let vars: Vec<Var> = if trainable {
            params.store.bind(tape)
        } else {
            (0..params.store.len())
                .map(|i| tape.constant(params.store.value(i).clone()))
                .collect()
        };
        Self::from_vars(tape, &vars)
    }

    pub fn from_vars(tape: &Tape, vars: &[Var]) -> Result<Self> {
        if vars.len() != NAMES.len() {
            return Err(Error::SizeMismatch(format!(
                "{} parameter nodes, expected {}",
                vars.len(),
                NAMES.len()
            )));
        }
        let lag = tape.softmax(vars[1])?;
        let projection_t = tape.transpose(vars[0]);
        let dyn_first = tape.concat_rows(&[tape.matmul(projection_t, vars[6])?, vars[7]])?;
        Ok(Self {
            leaves: vars.to_vec(),
            projection_t,
            lag_col: tape.transpose(lag),
            att_target: vars[2],
            att_source: vars[3],
            att_bias: vars[4],
            att_out: vars[5],
            dyn_first,
            dyn_bias: vars[8],
            dyn_out: vars[9],
            dyn_out_bias: vars[10],
        })
    }
}
