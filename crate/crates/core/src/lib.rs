//! Inference of time-varying directed interaction graphs from multivariate
//! time series with a space-and-time attention graph ODE, plus the
//! simulators, classical baselines and benchmark harness used to evaluate it.

pub mod autodiff;
pub mod baselines;
pub mod bench;
pub mod data;
pub mod error;
pub mod format;
pub mod graph;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
