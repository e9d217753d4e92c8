//! Reverse-mode differentiation over dense matrix operations.
//!
//! Every operation appends a node to the [`Tape`]; node indices are a
//! topological order, so [`Tape::backward`] is a single reverse sweep that
//! visits each node once.

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    LinComb(Vec<(Var, f64)>),
    Tanh(Var),
    Exp(Var),
    Sqrt(Var),
    Abs(Var),
    MaskedSoftmax(Var, Rc<Vec<bool>>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Transpose(Var),
    Reshape(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    Sum(Var),
    SquaredNorm(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::LinComb(..) => "lincomb",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Sqrt(..) => "sqrt",
            Op::Abs(..) => "abs",
            Op::MaskedSoftmax(..) => "masked_softmax",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::GatherRows(..) => "gather_rows",
            Op::Sum(..) => "sum",
            Op::SquaredNorm(..) => "squared_norm",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Expression graph recorded in evaluation order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    first_nonfinite: Cell<Option<(usize, &'static str)>>,
}

/// Gradients of one scalar output with respect to every node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        if self.first_nonfinite.get().is_none() && !value.is_finite() {
            self.first_nonfinite.set(Some((idx, op.name())));
        }
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                nodes[a.0].needs_grad || nodes[b.0].needs_grad
            }
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Sqrt(a)
            | Op::Abs(a)
            | Op::MaskedSoftmax(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::GatherRows(a, _)
            | Op::Sum(a)
            | Op::SquaredNorm(a) => nodes[a.0].needs_grad,
            Op::LinComb(terms) => terms.iter().any(|(v, _)| nodes[v.0].needs_grad),
            Op::ConcatRows(parts) | Op::ConcatCols(parts) => {
                parts.iter().any(|v| nodes[v.0].needs_grad)
            }
        };
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(idx)
    }

    /// Differentiable leaf.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf excluded from differentiation; its gradient reads as zero.
    pub fn constant(&self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes.borrow_mut()[v.0].needs_grad = false;
        v
    }

    pub fn scalar(&self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    /// Fails with the first node whose value was not finite.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_nonfinite.get() {
            Some((node, op)) => Err(Error::NonFinite { node, op }),
            None => Ok(()),
        }
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.cols() != y.rows() {
                return Err(shape_err(
                    "matmul",
                    format!("{:?} x {:?}", x.shape(), y.shape()),
                ));
            }
            x.matmul(y)
        };
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn zip(&self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let nodes = self.nodes.borrow();
        let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
        if x.shape() != y.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok(Tensor::from_vec(x.rows(), x.cols(), data))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |p, q| p + q)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds the `1 x c` row `row` to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, r) = (&nodes[a.0].value, &nodes[row.0].value);
            if r.rows() != 1 || r.cols() != x.cols() {
                return Err(shape_err(
                    "add_row",
                    format!("{:?} + row {:?}", x.shape(), r.shape()),
                ));
            }
            let c = x.cols();
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(c) {
                for (o, &b) in row.iter_mut().zip(r.data()) {
                    *o += b;
                }
            }
            out
        };
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::Scale(a, c))
    }

    /// `sum_k c_k * v_k` over same-shaped operands.
    pub fn lincomb(&self, terms: &[(Var, f64)]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (first, _) = terms
                .first()
                .ok_or_else(|| shape_err("lincomb", "no terms".into()))?;
            let shape = nodes[first.0].value.shape();
            let mut acc = Tensor::zeros(shape.0, shape.1);
            for &(v, c) in terms {
                let x = &nodes[v.0].value;
                if x.shape() != shape {
                    return Err(shape_err(
                        "lincomb",
                        format!("{:?} vs {:?}", x.shape(), shape),
                    ));
                }
                acc.add_scaled(x, c);
            }
            acc
        };
        Ok(self.push(out, Op::LinComb(terms.to_vec())))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    /// Elementwise absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    /// Row-wise softmax restricted to entries where `mask` is true
    /// (row-major, same shape as `a`); masked-out entries are exactly zero.
    pub fn masked_softmax(&self, a: Var, mask: Rc<Vec<bool>>) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if mask.len() != x.len() {
                return Err(shape_err(
                    "masked_softmax",
                    format!("mask of length {} for {:?}", mask.len(), x.shape()),
                ));
            }
            let (r, c) = x.shape();
            let mut out = Tensor::zeros(r, c);
            for i in 0..r {
                let row = &x.data()[i * c..(i + 1) * c];
                let m = &mask[i * c..(i + 1) * c];
                let max = row
                    .iter()
                    .zip(m)
                    .filter(|(_, &keep)| keep)
                    .map(|(&v, _)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(Error::Config(format!(
                        "softmax row {i} has no unmasked entries"
                    )));
                }
                let o = &mut out.data_mut()[i * c..(i + 1) * c];
                let mut total = 0.0;
                for j in 0..c {
                    if m[j] {
                        o[j] = (row[j] - max).exp();
                        total += o[j];
                    }
                }
                for v in o.iter_mut() {
                    *v /= total;
                }
            }
            out
        };
        Ok(self.push(out, Op::MaskedSoftmax(a, mask)))
    }

    /// Row-wise softmax over every entry.
    pub fn softmax(&self, a: Var) -> Result<Var> {
        let len = self.value(a).len();
        self.masked_softmax(a, Rc::new(vec![true; len]))
    }

    /// Stacks operands vertically; all must share a column count.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let cols = parts
                .first()
                .map(|p| nodes[p.0].value.cols())
                .ok_or_else(|| shape_err("concat_rows", "no operands".into()))?;
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let x = &nodes[p.0].value;
                if x.cols() != cols {
                    return Err(shape_err(
                        "concat_rows",
                        format!("{} vs {} columns", x.cols(), cols),
                    ));
                }
                data.extend_from_slice(x.data());
                rows += x.rows();
            }
            Tensor::from_vec(rows, cols, data)
        };
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Places operands side by side; all must share a row count.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let rows = parts
                .first()
                .map(|p| nodes[p.0].value.rows())
                .ok_or_else(|| shape_err("concat_cols", "no operands".into()))?;
            let mut cols = 0;
            for p in parts {
                let x = &nodes[p.0].value;
                if x.rows() != rows {
                    return Err(shape_err(
                        "concat_cols",
                        format!("{} vs {} rows", x.rows(), rows),
                    ));
                }
                cols += x.cols();
            }
            let mut out = Tensor::zeros(rows, cols);
            let mut offset = 0;
            for p in parts {
                let x = &nodes[p.0].value;
                for i in 0..rows {
                    for j in 0..x.cols() {
                        out.set(i, offset + j, x.get(i, j));
                    }
                }
                offset += x.cols();
            }
            out
        };
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = {
            let x = self.value(a);
            if x.len() != rows * cols {
                return Err(shape_err(
                    "reshape",
                    format!("{:?} to ({rows}, {cols})", x.shape()),
                ));
            }
            Tensor::from_vec(rows, cols, x.data().to_vec())
        };
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Output row `r` is row `index[r]` of `a`; rows may repeat.
    pub fn gather_rows(&self, a: Var, index: Rc<Vec<usize>>) -> Result<Var> {
        let out = {
            let x = self.value(a);
            let c = x.cols();
            let mut data = Vec::with_capacity(index.len() * c);
            for &r in index.iter() {
                if r >= x.rows() {
                    return Err(shape_err(
                        "gather_rows",
                        format!("row {r} of {:?}", x.shape()),
                    ));
                }
                data.extend_from_slice(&x.data()[r * c..(r + 1) * c]);
            }
            Tensor::from_vec(index.len(), c, data)
        };
        Ok(self.push(out, Op::GatherRows(a, index)))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn squared_norm(&self, a: Var) -> Var {
        let s = self.value(a).squared_norm();
        self.push(Tensor::scalar(s), Op::SquaredNorm(a))
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.0].value.shape();
        if out_shape != (1, 1) {
            return Err(shape_err(
                "backward",
                format!("output must be scalar, got {out_shape:?}"),
            ));
        }
        let shapes: Vec<_> = nodes.iter().map(|n| n.value.shape()).collect();
        let needs: Vec<bool> = nodes.iter().map(|n| n.needs_grad).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));

        let acc = |grads: &mut [Option<Tensor>], v: Var, g: Tensor| {
            if !needs[v.0] {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        let acc_with = |grads: &mut [Option<Tensor>],
                        v: Var,
                        shape: (usize, usize),
                        f: &mut dyn FnMut(&mut Tensor)| {
            if !needs[v.0] {
                return;
            }
            let slot = &mut grads[v.0];
            if slot.is_none() {
                *slot = Some(Tensor::zeros(shape.0, shape.1));
            }
            f(slot.as_mut().expect("just filled"));
        };

        for idx in (0..=output.0).rev() {
            let node = &nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            // Interior gradients are not reported, so the slot is consumed.
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let x = &nodes[a.0].value;
                    let y = &nodes[b.0].value;
                    let (m, k, n) = (x.rows(), x.cols(), y.cols());
                    // dA = G * B^T
                    acc_with(&mut grads, *a, (m, k), &mut |ga| {
                        let gd = g.data();
                        let yd = y.data();
                        let gad = ga.data_mut();
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += gd[i * n + j] * yd[p * n + j];
                                }
                                gad[i * k + p] += s;
                            }
                        }
                    });
                    // dB = A^T * G, accumulated row by row of A
                    acc_with(&mut grads, *b, (k, n), &mut |gb| {
                        let (xd, gd) = (x.data(), g.data());
                        let gbd = gb.data_mut();
                        for i in 0..m {
                            let g_row = &gd[i * n..(i + 1) * n];
                            for p in 0..k {
                                let a = xd[i * k + p];
                                if a == 0.0 {
                                    continue;
                                }
                                for (o, &gv) in gbd[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                                    *o += a * gv;
                                }
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let x = &nodes[a.0].value;
                    let y = &nodes[b.0].value;
                    let ga = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(y.data()).map(|(p, q)| p * q).collect(),
                    );
                    let gb = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(x.data()).map(|(p, q)| p * q).collect(),
                    );
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let c = g.cols();
                    acc_with(&mut grads, *row, (1, c), &mut |gr| {
                        for g_row in g.data().chunks(c) {
                            for (o, &v) in gr.data_mut().iter_mut().zip(g_row) {
                                *o += v;
                            }
                        }
                    });
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut grads, *a, g.map(|x| c * x));
                }
                Op::LinComb(terms) => {
                    for &(v, c) in terms {
                        acc_with(&mut grads, v, g.shape(), &mut |gv| gv.add_scaled(&g, c));
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gi, yi)| gi * (1.0 - yi * yi))
                        .collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows(), g.cols(), d));
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let d = g.data().iter().zip(y.data()).map(|(gi, yi)| gi * yi).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows(), g.cols(), d));
                }
                Op::Sqrt(a) => {
                    let y = &node.value;
                    let d = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gi, yi)| if *yi > 0.0 { gi * 0.5 / yi } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows(), g.cols(), d));
                }
                Op::Abs(a) => {
                    let x = &nodes[a.0].value;
                    let d = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gi, xi)| {
                            if *xi > 0.0 {
                                *gi
                            } else if *xi < 0.0 {
                                -gi
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows(), g.cols(), d));
                }
                Op::MaskedSoftmax(a, mask) => {
                    let y = &node.value;
                    let (r, c) = y.shape();
                    let mut d = Tensor::zeros(r, c);
                    for i in 0..r {
                        let mut dot = 0.0;
                        for j in 0..c {
                            dot += y.get(i, j) * g.get(i, j);
                        }
                        for j in 0..c {
                            if mask[i * c + j] {
                                d.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                            }
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let rows = shapes[p.0].0;
                        let slice = g.data()[offset * c..(offset + rows) * c].to_vec();
                        acc(&mut grads, *p, Tensor::from_vec(rows, c, slice));
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = shapes[p.0];
                        let part = Tensor::from_fn(rows, cols, |i, j| g.get(i, offset + j));
                        acc(&mut grads, *p, part);
                        offset += cols;
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Reshape(a) => {
                    let (r, c) = shapes[a.0];
                    acc(&mut grads, *a, Tensor::from_vec(r, c, g.into_vec()));
                }
                Op::GatherRows(a, index) => {
                    let (r, c) = shapes[a.0];
                    acc_with(&mut grads, *a, (r, c), &mut |ga| {
                        let gd = g.data();
                        let gad = ga.data_mut();
                        for (k, &src) in index.iter().enumerate() {
                            for j in 0..c {
                                gad[src * c + j] += gd[k * c + j];
                            }
                        }
                    });
                }
                Op::Sum(a) => {
                    let (r, c) = shapes[a.0];
                    acc(&mut grads, *a, Tensor::filled(r, c, g.item()));
                }
                Op::SquaredNorm(a) => {
                    let s = 2.0 * g.item();
                    acc(&mut grads, *a, nodes[a.0].value.map(|x| s * x));
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}
