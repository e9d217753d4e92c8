//! Ground-truth dynamical systems used to generate training and benchmark
//! data. Each simulator is deterministic given its config and seed.

mod config;
mod dmf;
mod five_node;
mod iaf;
mod network;
mod wilson_cowan;

pub use config::{SimulatorConfig, SystemKind};
pub use dmf::{dmf_transfer, simulate_dmf, DmfConfig};
pub use five_node::{five_node_ground_truth, simulate_five_node, FiveNodeConfig};
pub use iaf::{simulate_iaf_detailed, simulate_iaf_network, IafConfig, IafNeuron, IafOutput};
pub use network::{random_network, LabeledNetwork};
pub use wilson_cowan::{simulate_wilson_cowan, wc_sigmoid, WilsonCowanConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PerturbationRecord;
use crate::error::{Error, Result};

/// Independent, reproducible random stream `stream` derived from `seed`.
pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Grid step index of a perturbation time, rejecting off-grid times.
pub(crate) fn grid_step(record: &PerturbationRecord, dt: f64, len: usize) -> Result<usize> {
    let k = record.time / dt;
    let r = k.round();
    if (k - r).abs() > 1e-9 * k.abs().max(1.0) || r < 0.0 || r as usize >= len {
        return Err(Error::OffGrid { time: record.time });
    }
    Ok(r as usize)
}

pub(crate) fn check_finite_state(state: &[f64], step: usize, system: &str) -> Result<()> {
    if let Some(i) = state.iter().position(|x| !x.is_finite()) {
        return Err(Error::BlowUp {
            step,
            detail: format!("{system}: vertex {i} is {}", state[i]),
        });
    }
    Ok(())
}
