//! Define-by-run reverse-mode differentiation.
//!
//! Every forward op appends a node holding its value and enough context to
//! produce the vector-Jacobian product later. A tape is built fresh for each
//! forward pass and thrown away after `backward`.

use std::collections::HashMap;
use std::sync::Arc;

use crate::autodiff::params::{ParamId, ParameterStore};
use crate::autodiff::tensor::{gemm, Operand, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary elementwise op expands to the left shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    /// `[1, c]` or `[c]` repeated down the rows of `[r, c]`.
    Row,
    /// `[r, 1]` repeated across the columns of `[r, c]`.
    Col,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Softplus(Var),
    Log(Var),
    Exp(Var),
    StackRows(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    Column(Var, usize),
    LogSumExp(Var),
    Combine(Vec<Var>, Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients of a scalar with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn stable_softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    stable_softplus(x)
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn resolve_broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::Same);
    }
    if b.len() == 1 {
        return Ok(Broadcast::Scalar);
    }
    if let [r, c] = *a.shape() {
        match *b.shape() {
            [1, bc] | [bc] if bc == c => return Ok(Broadcast::Row),
            [br, 1] if br == r => return Ok(Broadcast::Col),
            _ => {}
        }
    }
    Err(Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })
}

/// Value of the broadcast operand at flat position `i` of the left shape.
#[inline]
fn bcast_at(b: &[f64], mode: Broadcast, cols: usize, i: usize) -> f64 {
    match mode {
        Broadcast::Same => b[i],
        Broadcast::Scalar => b[0],
        Broadcast::Row => b[i % cols],
        Broadcast::Col => b[i / cols],
    }
}

/// Sums a left-shaped gradient down to the broadcast operand's shape.
fn reduce_to(g: &Tensor, mode: Broadcast, target: &Tensor) -> Tensor {
    match mode {
        Broadcast::Same => g.clone(),
        Broadcast::Scalar => {
            let mut t = Tensor::zeros_like(target);
            t.data_mut()[0] = g.sum();
            t
        }
        Broadcast::Row => {
            let cols = g.cols();
            let mut t = Tensor::zeros_like(target);
            let out = t.data_mut();
            for (i, v) in g.data().iter().enumerate() {
                out[i % cols] += v;
            }
            t
        }
        Broadcast::Col => {
            let cols = g.cols();
            let mut t = Tensor::zeros_like(target);
            let out = t.data_mut();
            for (i, v) in g.data().iter().enumerate() {
                out[i / cols] += v;
            }
            t
        }
    }
}

fn check_indices(op: &'static str, indices: &[usize], size: usize) -> Result<()> {
    match indices.iter().find(|&&i| i >= size) {
        Some(&index) => Err(Error::Index { op, index, size }),
        None => Ok(()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(id)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// A differentiable input that is not a stored parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a parameter's current value; repeated calls return the same var.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&var) = self.param_vars.get(&id) {
            return var;
        }
        let var = self.push(store.value(id).clone(), Op::Param, true);
        self.param_vars.insert(id, var);
        self.params.push((id, var));
        var
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, Broadcast)> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mode = resolve_broadcast(name, ta, tb)?;
        let cols = ta.cols();
        let bd = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bcast_at(bd, mode, cols, i)))
            .collect();
        Ok((Tensor::new(ta.shape().to_vec(), data)?, mode))
    }

    /// `a + b`; `b` may be a scalar, a row vector, or a column vector.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, mode) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b, mode), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, mode) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b, mode), rg))
    }

    /// Elementwise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, mode) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b, mode), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.needs(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.needs(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(stable_softplus);
        let rg = self.needs(a);
        self.push(value, Op::Softplus(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.needs(a);
        self.push(value, Op::Log(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.needs(a);
        self.push(value, Op::Exp(a), rg)
    }

    /// Row-wise softmax, shifted by the row maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2("softmax_rows")?;
        let mut out = Tensor::zeros(&[r, c]);
        for i in 0..r {
            softmax_row(x.row(i), out.row_mut(i));
        }
        let rg = self.needs(a);
        Ok(self.push(out, Op::SoftmaxRows(a), rg))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2("log_softmax_rows")?;
        let mut out = Tensor::zeros(&[r, c]);
        for i in 0..r {
            let lse = log_sum_exp(x.row(i));
            for (o, v) in out.row_mut(i).iter_mut().zip(x.row(i)) {
                *o = v - lse;
            }
        }
        let rg = self.needs(a);
        Ok(self.push(out, Op::LogSoftmaxRows(a), rg))
    }

    /// Concatenates matrices (or vectors, as single rows) vertically.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("stack_rows of an empty list"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            let r = match t.rank() {
                1 => 1,
                2 => t.rows(),
                _ => 0,
            };
            if t.rank() == 0 || t.rank() > 2 || t.cols() != cols {
                return Err(Error::Shape {
                    op: "stack_rows",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
            rows += r;
        }
        let value = Tensor::matrix(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::StackRows(parts.to_vec()), rg))
    }

    /// `out[i] = a[indices[i]]`.
    pub fn gather_rows(&mut self, a: Var, indices: Arc<[usize]>) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2("gather_rows")?;
        check_indices("gather_rows", &indices, r)?;
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices.iter() {
            data.extend_from_slice(x.row(i));
        }
        let value = Tensor::matrix(indices.len(), c, data)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::GatherRows(a, indices), rg))
    }

    /// `out[indices[i]] += a[i]` into a fresh `size`-row matrix.
    pub fn scatter_add_rows(&mut self, a: Var, indices: Arc<[usize]>, size: usize) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2("scatter_add_rows")?;
        if indices.len() != r {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                lhs: x.shape().to_vec(),
                rhs: vec![indices.len()],
            });
        }
        check_indices("scatter_add_rows", &indices, size)?;
        let mut out = Tensor::zeros(&[size, c]);
        for (row, &dst) in indices.iter().enumerate() {
            for (o, v) in out.row_mut(dst).iter_mut().zip(x.row(row)) {
                *o += v;
            }
        }
        let rg = self.needs(a);
        Ok(self.push(out, Op::ScatterAddRows(a, indices), rg))
    }

    /// Sums rows sharing a segment id; `segments[i]` is the segment of row `i`.
    pub fn row_sum_segments(
        &mut self,
        a: Var,
        segments: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var> {
        self.scatter_add_rows(a, segments, num_segments)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.needs(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let value = Tensor::scalar(x.sum() / x.len() as f64);
        let rg = self.needs(a);
        Ok(self.push(value, Op::Mean(a), rg))
    }

    /// Per-row sums as an `[r, 1]` column.
    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, _) = x.dims2("row_sums")?;
        let data = (0..r).map(|i| x.row(i).iter().sum()).collect();
        let value = Tensor::matrix(r, 1, data)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::RowSums(a), rg))
    }

    /// Column `j` as an `[r, 1]` matrix.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2("column")?;
        if j >= c {
            return Err(Error::Index {
                op: "column",
                index: j,
                size: c,
            });
        }
        let data = (0..r).map(|i| x.get(i, j)).collect();
        let value = Tensor::matrix(r, 1, data)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::Column(a, j), rg))
    }

    /// `log Σ exp(a)` over every element, max-shifted.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::contract("log_sum_exp of an empty tensor"));
        }
        let value = Tensor::scalar(log_sum_exp(x.data()));
        let rg = self.needs(a);
        Ok(self.push(value, Op::LogSumExp(a), rg))
    }

    /// `Σᵢ weights[i]·inputs[i] + bias` over equally shaped inputs.
    ///
    /// This is the `(k, 1)` kernel shared by the attribute, layer and
    /// subgraph aggregators.
    pub fn combine(&mut self, inputs: &[Var], weights: Var, bias: Var) -> Result<Var> {
        let w = self.value(weights);
        if inputs.is_empty() || w.len() != inputs.len() {
            return Err(Error::Shape {
                op: "combine",
                lhs: vec![inputs.len()],
                rhs: w.shape().to_vec(),
            });
        }
        if self.value(bias).len() != 1 {
            return Err(Error::Shape {
                op: "combine",
                lhs: vec![1],
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        let shape = self.value(inputs[0]).shape().to_vec();
        let b = self.value(bias).item();
        let mut out = Tensor::full(&shape, b);
        for (k, &x) in inputs.iter().enumerate() {
            let t = self.value(x);
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "combine",
                    lhs: shape,
                    rhs: t.shape().to_vec(),
                });
            }
            let wk = w.data()[k];
            for (o, v) in out.data_mut().iter_mut().zip(t.data()) {
                *o += wk * v;
            }
        }
        let rg = inputs.iter().any(|&x| self.needs(x)) || self.needs(weights) || self.needs(bias);
        Ok(self.push(out, Op::Combine(inputs.to_vec(), weights, bias), rg))
    }

    /// Gradients of the scalar `loss` with respect to every leaf and parameter.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(loss_value.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            // intermediate gradients are released as soon as they are consumed
            if let Some(g) = grads[i].take() {
                self.propagate(i, &g, &mut grads)?;
            }
        }
        Ok(Gradients { grads })
    }

    /// Accumulates `∂loss/∂param` into the store's gradient buffers.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for &(pid, var) in &self.params {
            if let Some(g) = grads.get(var) {
                store.accumulate_grad(pid, g);
            }
        }
        store.mark_grads_ready();
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2("matmul")?;
                let (_, n) = tb.dims2("matmul")?;
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(
                        Operand::plain(g.data(), m, n),
                        Operand::plain(tb.data(), k, n).t(),
                        &mut ga,
                        false,
                    );
                    self.accumulate(grads, *a, Tensor::matrix(m, k, ga)?);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(
                        Operand::plain(ta.data(), m, k).t(),
                        Operand::plain(g.data(), m, n),
                        &mut gb,
                        false,
                    );
                    self.accumulate(grads, *b, Tensor::matrix(k, n, gb)?);
                }
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, g.transpose()?);
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshape(shape)?);
            }
            Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
                let negate = matches!(self.nodes[i].op, Op::Sub(..));
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    let mut gb = reduce_to(g, *mode, self.value(*b));
                    if negate {
                        gb = gb.map(|v| -v);
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b, mode) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let cols = ta.cols();
                if self.needs(*a) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(k, gv)| gv * bcast_at(tb.data(), *mode, cols, k))
                        .collect();
                    self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), data)?);
                }
                if self.needs(*b) {
                    let prod = g.zip_map(ta, |gv, av| gv * av);
                    self.accumulate(grads, *b, reduce_to(&prod, *mode, tb));
                }
            }
            Op::Scale(a, factor) => {
                self.accumulate(grads, *a, g.map(|v| v * factor));
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Softplus(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| gv * sigmoid(x));
                self.accumulate(grads, *a, ga);
            }
            Op::Log(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| gv / x);
                self.accumulate(grads, *a, ga);
            }
            Op::Exp(a) => {
                let ga = g.zip_map(out, |gv, y| gv * y);
                self.accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let (r, _) = out.dims2("softmax_rows")?;
                let mut ga = Tensor::zeros_like(out);
                for row in 0..r {
                    let (y, gr) = (out.row(row), g.row(row));
                    let dot: f64 = y.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((o, yv), gv) in ga.row_mut(row).iter_mut().zip(y).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let (r, _) = out.dims2("log_softmax_rows")?;
                let mut ga = Tensor::zeros_like(out);
                for row in 0..r {
                    let (y, gr) = (out.row(row), g.row(row));
                    let total: f64 = gr.iter().sum();
                    for ((o, yv), gv) in ga.row_mut(row).iter_mut().zip(y).zip(gr) {
                        *o = gv - yv.exp() * total;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    let n = t.len();
                    if self.needs(p) {
                        let slice = g.data()[offset..offset + n].to_vec();
                        self.accumulate(grads, p, Tensor::new(t.shape().to_vec(), slice)?);
                    }
                    offset += n;
                }
            }
            Op::GatherRows(a, indices) => {
                let mut ga = Tensor::zeros_like(self.value(*a));
                for (row, &src) in indices.iter().enumerate() {
                    for (o, v) in ga.row_mut(src).iter_mut().zip(g.row(row)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ScatterAddRows(a, indices) => {
                let ta = self.value(*a);
                let mut data = Vec::with_capacity(ta.len());
                for &dst in indices.iter() {
                    data.extend_from_slice(g.row(dst));
                }
                self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), data)?);
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::Mean(a) => {
                let ta = self.value(*a);
                let gv = g.item() / ta.len() as f64;
                self.accumulate(grads, *a, Tensor::full(ta.shape(), gv));
            }
            Op::RowSums(a) => {
                let ta = self.value(*a);
                let cols = ta.cols();
                let data = (0..ta.len()).map(|k| g.data()[k / cols]).collect();
                self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), data)?);
            }
            Op::Column(a, j) => {
                let ta = self.value(*a);
                let mut ga = Tensor::zeros_like(ta);
                let cols = ta.cols();
                for (row, gv) in g.data().iter().enumerate() {
                    ga.data_mut()[row * cols + j] = *gv;
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSumExp(a) => {
                let lse = out.item();
                let gv = g.item();
                let ga = self.value(*a).map(|x| gv * (x - lse).exp());
                self.accumulate(grads, *a, ga);
            }
            Op::Combine(inputs, weights, bias) => {
                let w = self.value(*weights);
                for (k, &x) in inputs.iter().enumerate() {
                    if self.needs(x) {
                        let wk = w.data()[k];
                        self.accumulate(grads, x, g.map(|v| v * wk));
                    }
                }
                if self.needs(*weights) {
                    let data = inputs
                        .iter()
                        .map(|&x| {
                            g.data()
                                .iter()
                                .zip(self.value(x).data())
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    self.accumulate(grads, *weights, Tensor::new(w.shape().to_vec(), data)?);
                }
                if self.needs(*bias) {
                    let mut gb = Tensor::zeros_like(self.value(*bias));
                    gb.data_mut()[0] = g.sum();
                    self.accumulate(grads, *bias, gb);
                }
            }
        }
        Ok(())
    }
}
