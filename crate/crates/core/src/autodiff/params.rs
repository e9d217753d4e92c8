use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::format::to_json_string;

/// Gradient descent with momentum and global gradient-norm clipping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumSgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
}

impl Default for MomentumSgd {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            momentum: 0.9,
            clip_norm: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NamedArray {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    params: Vec<NamedArray>,
}

/// Named trainable arrays plus momentum buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    velocity: Vec<Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("parameter `{name}` is not finite")));
        }
        let (r, c) = value.shape();
        self.names.push(name);
        self.values.push(value);
        self.velocity.push(Tensor::zeros(r, c));
        Ok(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.values[i])
    }

    pub fn value(&self, idx: usize) -> &Tensor {
        &self.values[idx]
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self
            .index(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
        if value.shape() != self.values[i].shape() {
            return Err(Error::Shape {
                op: "set",
                detail: format!("{:?} vs {:?}", value.shape(), self.values[i].shape()),
            });
        }
        self.values[i] = value;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a leaf of `tape`, in insertion order.
    pub fn bind(&self, tape: &Tape) -> Vec<Var> {
        self.values.iter().map(|v| tape.leaf(v.clone())).collect()
    }

    /// One momentum step using the gradients of `vars` (as returned by
    /// [`bind`](Self::bind)). Returns the pre-clipping gradient norm.
    pub fn step(&mut self, grads: &Gradients, vars: &[Var], opt: &MomentumSgd) -> Result<f64> {
        let gs: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();
        self.step_with(&gs, opt)
    }

    pub fn step_with(&mut self, grads: &[Tensor], opt: &MomentumSgd) -> Result<f64> {
        if grads.len() != self.values.len() {
            return Err(Error::SizeMismatch(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.values.len()
            )));
        }
        let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Degenerate("non-finite gradient".into()));
        }
        let scale = if norm > opt.clip_norm { opt.clip_norm / norm } else { 1.0 };
        for ((p, v), g) in self.values.iter_mut().zip(&mut self.velocity).zip(grads) {
            for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vi = opt.momentum * *vi - opt.learning_rate * scale * gi;
                *pi += *vi;
            }
        }
        if let Some(i) = self.values.iter().position(|p| !p.is_finite()) {
            return Err(Error::Degenerate(format!(
                "parameter `{}` became non-finite",
                self.names[i]
            )));
        }
        Ok(norm)
    }

    /// Zeroes the momentum buffers.
    pub fn reset_velocity(&mut self) {
        for v in &mut self.velocity {
            v.data_mut().fill(0.0);
        }
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(n, v)| NamedArray {
                    name: n.clone(),
                    rows: v.rows(),
                    cols: v.cols(),
                    data: v.data().to_vec(),
                })
                .collect(),
        };
        to_json_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        let mut store = Self::new();
        for p in ck.params {
            if p.data.len() != p.rows * p.cols {
                return Err(Error::Validation(format!(
                    "parameter `{}` has {} values for shape {}x{}",
                    p.name,
                    p.data.len(),
                    p.rows,
                    p.cols
                )));
            }
            store.insert(p.name, Tensor::from_vec(p.rows, p.cols, p.data))?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::zeros(2, 2)).unwrap();
        assert!(s.insert("w", Tensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn momentum_step_and_clipping() {
        let mut s = ParameterStore::new();
        s.insert("x", Tensor::scalar(1.0)).unwrap();
        let opt = MomentumSgd {
            learning_rate: 0.1,
            momentum: 0.5,
            clip_norm: 10.0,
        };
        s.step_with(&[Tensor::scalar(2.0)], &opt).unwrap();
        assert!((s.value(0).item() - 0.8).abs() < 1e-15);
        s.step_with(&[Tensor::scalar(2.0)], &opt).unwrap();
        // v = 0.5 * -0.2 - 0.2 = -0.3
        assert!((s.value(0).item() - 0.5).abs() < 1e-15);

        let mut c = ParameterStore::new();
        c.insert("x", Tensor::scalar(0.0)).unwrap();
        let norm = c.step_with(&[Tensor::scalar(100.0)], &MomentumSgd::default()).unwrap();
        assert_eq!(norm, 100.0);
        assert!((c.value(0).item() + 0.1).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut s = ParameterStore::new();
        s.insert("a", Tensor::from_vec(1, 3, vec![0.1, -2.0, 1.0 / 3.0])).unwrap();
        s.insert("b", Tensor::scalar(5.0)).unwrap();
        let back = ParameterStore::from_json(&s.to_json()).unwrap();
        assert_eq!(back.names(), s.names());
        assert_eq!(back.get("a"), s.get("a"));
        assert_eq!(back.to_json(), s.to_json());
    }
}
