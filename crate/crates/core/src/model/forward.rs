//! Forward pass of the attention graph ODE, batched over `B` independent
//! blocks of `N` vertices. Block-major layout: row `b * N + i` belongs to
//! vertex `i` of block `b`.

use std::rc::Rc;

use nalgebra::DMatrix;

use super::params::{BoundParams, ModelParameters};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub(crate) struct Layout {
    pub blocks: usize,
    pub n: usize,
    /// Row `(b, i, j)` of the pair table reads target row `b*N+i`.
    pair_target: Rc<Vec<usize>>,
    pair_source: Rc<Vec<usize>>,
    /// Row `b*N+i` of a broadcast reads row `b` of a `B x N` matrix.
    block_of: Rc<Vec<usize>>,
    pub mask: Rc<Vec<bool>>,
}

impl Layout {
    /// `mask` is one target-major `N x N` support, repeated for every block.
    pub fn new(blocks: usize, n: usize, mask: &[bool]) -> Result<Self> {
        if mask.len() != n * n {
            return Err(Error::SizeMismatch(format!(
                "support mask of length {} for {n} vertices",
                mask.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| !mask[i * n..(i + 1) * n].iter().any(|&m| m)) {
            return Err(Error::Config(format!("vertex {i} has no supported in-edges")));
        }
        let mut pair_target = Vec::with_capacity(blocks * n * n);
        let mut pair_source = Vec::with_capacity(blocks * n * n);
        for b in 0..blocks {
            for i in 0..n {
                for j in 0..n {
                    pair_target.push(b * n + i);
                    pair_source.push(b * n + j);
                }
            }
        }
        let block_of = (0..blocks * n).map(|r| r / n).collect();
        let full_mask = (0..blocks).flat_map(|_| mask.iter().copied()).collect();
        Ok(Self {
            blocks,
            n,
            pair_target: Rc::new(pair_target),
            pair_source: Rc::new(pair_source),
            block_of: Rc::new(block_of),
            mask: Rc::new(full_mask),
        })
    }

    pub fn rows(&self) -> usize {
        self.blocks * self.n
    }

    fn ones(&self, tape: &Tape) -> Var {
        tape.constant(Tensor::filled(self.n, 1, 1.0))
    }
}

/// Space attention from lag windows (`BN x L`, column `δ` = lag `δ`).
/// Returns `BN x N`; row `b*N+i` is the distribution of target `i` over
/// its supported sources.
pub(crate) fn attention(tape: &Tape, p: &BoundParams, lay: &Layout, windows: Var) -> Result<Var> {
    let u = tape.matmul(windows, p.att_target)?;
    let v = tape.matmul(windows, p.att_source)?;
    let pre = tape.add(
        tape.gather_rows(u, lay.pair_target.clone())?,
        tape.gather_rows(v, lay.pair_source.clone())?,
    )?;
    let hidden = tape.tanh(tape.add_row(pre, p.att_bias)?);
    let scores = tape.matmul(hidden, p.att_out)?;
    let scores = tape.reshape(scores, lay.rows(), lay.n)?;
    tape.masked_softmax(scores, lay.mask.clone())
}

/// Attention-weighted, lag-mixed signal `Σ_j α_ij Σ_δ l_δ X_j(t - δ)`
/// (`BN x 1`) from the per-lag signals `lagged[δ]` (each `BN x 1`). The
/// projection is linear, so `g'_i` is this scalar times `W^T`.
pub(crate) fn pooled_signal(
    tape: &Tape,
    p: &BoundParams,
    lay: &Layout,
    attention: Var,
    lagged: &[Var],
) -> Result<Var> {
    let stacked = tape.concat_cols(lagged)?;
    let mixed = tape.matmul(stacked, p.lag_col)?;
    let mixed = tape.reshape(mixed, lay.blocks, lay.n)?;
    let broadcast = tape.gather_rows(mixed, lay.block_of.clone())?;
    let weighted = tape.mul(attention, broadcast)?;
    tape.matmul(weighted, lay.ones(tape))
}

/// `g'` (`BN x d`).
pub(crate) fn aggregate(
    tape: &Tape,
    p: &BoundParams,
    lay: &Layout,
    attention: Var,
    lagged: &[Var],
) -> Result<Var> {
    let pooled = pooled_signal(tape, p, lay, attention, lagged)?;
    tape.matmul(pooled, p.projection_t)
}

/// Shared per-vertex dynamics network `f_θ(g', t)`, `BN x 1`, evaluated
/// from the pooled signal: `g' · dyn_in = pooled · (W^T dyn_in)`.
pub(crate) fn dynamics(tape: &Tape, p: &BoundParams, pooled: Var, time_col: Var) -> Result<Var> {
    let inputs = tape.concat_cols(&[pooled, time_col])?;
    let pre = tape.matmul(inputs, p.dyn_first)?;
    let hidden = tape.tanh(tape.add_row(pre, p.dyn_bias)?);
    tape.add_row(tape.matmul(hidden, p.dyn_out)?, p.dyn_out_bias)
}

fn check_window(params: &ModelParameters, windows: &DMatrix<f64>) -> Result<()> {
    if windows.nrows() != params.lags() {
        return Err(Error::SizeMismatch(format!(
            "lag window has {} rows, model uses {} lags",
            windows.nrows(),
            params.lags()
        )));
    }
    Ok(())
}

/// `L x N` window (row `δ` = `X(., t - δ dt)`) to the `N x L` block layout.
fn window_tensor(windows: &DMatrix<f64>) -> Tensor {
    Tensor::from_fn(windows.ncols(), windows.nrows(), |i, d| windows[(d, i)])
}

fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    t.to_dmatrix()
}

/// Attention matrix at one time point. `windows` is `L x N` with row `δ`
/// holding `X(., t - δ dt)`; `mask` is target-major (`mask[i*N + j]` iff
/// `i` may attend to `j`). Entry `(i, j)` is the weight of edge `j -> i`.
pub fn compute_attention(
    params: &ModelParameters,
    windows: &DMatrix<f64>,
    mask: &[bool],
) -> Result<DMatrix<f64>> {
    check_window(params, windows)?;
    let n = windows.ncols();
    let lay = Layout::new(1, n, mask)?;
    let tape = Tape::new();
    let p = BoundParams::bind(&tape, params, false)?;
    let w = tape.constant(window_tensor(windows));
    let a = attention(&tape, &p, &lay, w)?;
    tape.check_finite()?;
    let out = to_dmatrix(&tape.value(a));
    Ok(out)
}

fn lag_columns(tape: &Tape, windows: &DMatrix<f64>) -> Vec<Var> {
    (0..windows.nrows())
        .map(|d| tape.constant(Tensor::column(windows.row(d).iter().copied().collect())))
        .collect()
}

/// Aggregated representation `g'` (`N x d`) for a fixed attention matrix.
pub fn aggregate_signals(
    params: &ModelParameters,
    attention_matrix: &DMatrix<f64>,
    windows: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_window(params, windows)?;
    let n = windows.ncols();
    if attention_matrix.shape() != (n, n) {
        return Err(Error::SizeMismatch(format!(
            "attention is {:?}, expected {n}x{n}",
            attention_matrix.shape()
        )));
    }
    let lay = Layout::new(1, n, &vec![true; n * n])?;
    let tape = Tape::new();
    let p = BoundParams::bind(&tape, params, false)?;
    let a = tape.constant(Tensor::from_dmatrix(attention_matrix));
    let lagged = lag_columns(&tape, windows);
    let g = aggregate(&tape, &p, &lay, a, &lagged)?;
    let out = to_dmatrix(&tape.value(g));
    Ok(out)
}

/// Derivative of every vertex at normalized time `t_norm`. `state` is
/// `X̂(., t)`; `history` is `(L-1) x N` with row `δ-1` holding the lagged
/// value `X(., t - δ dt)`.
pub fn ode_rhs(
    params: &ModelParameters,
    attention_matrix: &DMatrix<f64>,
    state: &[f64],
    history: &DMatrix<f64>,
    t_norm: f64,
) -> Result<Vec<f64>> {
    let n = state.len();
    if let Some(v) = state.iter().position(|x| !x.is_finite()) {
        return Err(Error::Validation(format!("non-finite state at vertex {v}")));
    }
    if history.nrows() + 1 != params.lags() || history.ncols() != n {
        return Err(Error::SizeMismatch(format!(
            "history is {:?}, expected {}x{n}",
            history.shape(),
            params.lags() - 1
        )));
    }
    let mut windows = DMatrix::zeros(params.lags(), n);
    windows.row_mut(0).copy_from(&DMatrix::from_row_slice(1, n, state));
    for d in 1..params.lags() {
        windows.row_mut(d).copy_from(&history.row(d - 1));
    }
    let lay = Layout::new(1, n, &vec![true; n * n])?;
    let tape = Tape::new();
    let p = BoundParams::bind(&tape, params, false)?;
    let a = tape.constant(Tensor::from_dmatrix(attention_matrix));
    let lagged = lag_columns(&tape, &windows);
    let pooled = pooled_signal(&tape, &p, &lay, a, &lagged)?;
    let time = tape.constant(Tensor::filled(n, 1, t_norm));
    let f = dynamics(&tape, &p, pooled, time)?;
    tape.check_finite()?;
    let out = tape.value(f).data().to_vec();
    Ok(out)
}
