//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive applied through a [`Tape`] is evaluated eagerly and
//! recorded as a node. [`Tape::backward`] then walks the nodes in reverse and
//! accumulates exact gradients into every leaf that requires one. Leaves are
//! either constants (inputs, noise) or named parameters.
//!
//! ```
//! use bayescall::grad::Tape;
//! use bayescall::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.param("w", Tensor::scalar(3.0));
//! let y = tape.multiply(w, w).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.param("w").unwrap().item().unwrap(), 6.0);
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_into, Tensor};

/// Primitive operations understood by the tape.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `[m x k] · [k x n]`.
    Matmul,
    /// Elementwise, or `[n x k] + [k]` row broadcast.
    Add,
    /// Elementwise, or `[n x k] - [k]` row broadcast.
    Sub,
    /// Elementwise product of equal shapes.
    Multiply,
    /// Multiplication by a constant.
    Scale(f64),
    /// Addition of a constant.
    Offset(f64),
    ConcatCols,
    ConcatRows,
    SliceRows { start: usize, end: usize },
    SliceCols { start: usize, end: usize },
    Sigmoid,
    Tanh,
    Softplus,
    SoftmaxRows,
    /// Log-sum-exp stabilized `log(softmax(x))` per row.
    LogSoftmaxRows,
    Log,
    Sum,
    Mean,
    Reshape(Vec<usize>),
}

impl OpKind {
    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Matmul | OpKind::Add | OpKind::Sub | OpKind::Multiply => Some(2),
            OpKind::ConcatCols | OpKind::ConcatRows => None,
            _ => Some(1),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Source {
    Constant,
    Param,
    Op { kind: OpKind, inputs: Vec<usize> },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    source: Source,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, usize)>,
}

/// Gradients produced by [`Tape::backward`], keyed by leaf.
#[derive(Clone, Debug)]
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    params: Vec<(String, usize)>,
}

impl Gradients {
    /// Gradient of a leaf that requires grad.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(var.0).and_then(Option::as_ref)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, i)| self.leaves[*i].as_ref())
    }

    pub fn into_named(mut self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, i) in &self.params {
            if let Some(g) = self.leaves[*i].take() {
                out.insert(name.clone(), g);
            }
        }
        out
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

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Source::Constant, false)
    }

    /// Registers a named trainable parameter.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let name = name.into();
        let v = self.push(value, Source::Param, true);
        self.params.push((name, v.0));
        v
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(n, i)| (n.as_str(), Var(*i)))
    }

    fn push(&mut self, value: Tensor, source: Source, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            source,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::State(format!(
                "variable {} is not recorded on this tape",
                var.0
            )))
        }
    }

    /// Evaluates `kind` on `inputs` and records the application.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        let value = {
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            primitive_forward(&kind, &vals)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(
            value,
            Source::Op {
                kind,
                inputs: inputs.iter().map(|v| v.0).collect(),
            },
            requires_grad,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Matmul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn multiply(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Multiply, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Scale(c), &[a])
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Offset(c), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::ConcatCols, parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::ConcatRows, parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.apply(OpKind::SliceRows { start, end }, &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.apply(OpKind::SliceCols { start, end }, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Softplus, &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::SoftmaxRows, &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::LogSoftmaxRows, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Mean, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(OpKind::Reshape(shape.to_vec()), &[a])
    }

    /// Re-evaluates every recorded op from the leaf values and returns the
    /// resulting node values in recording order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.source {
                Source::Constant | Source::Param => node.value.clone(),
                Source::Op { kind, inputs } => {
                    let vals: Vec<&Tensor> = inputs.iter().map(|&i| &values[i]).collect();
                    primitive_forward(kind, &vals)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse-mode accumulation of `d output / d leaf` for every leaf that
    /// requires grad. Registered parameters that do not influence `output`
    /// receive a zero gradient.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called on an empty tape".into()));
        }
        self.check(output)?;
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::filled(out.shape(), 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Source::Op { kind, inputs } = &node.source else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(kind, inputs, &node.value, &g, &mut grads)?;
        }

        let mut leaves: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                continue;
            }
            if let Source::Param = node.source {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                leaves[i] = Some(g);
            }
        }
        Ok(Gradients {
            leaves,
            params: self.params.clone(),
        })
    }

    fn backprop_node(
        &self,
        kind: &OpKind,
        inputs: &[usize],
        out: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let val = |k: usize| &self.nodes[inputs[k]].value;
        let needs = |k: usize| self.nodes[inputs[k]].requires_grad;
        let gd = g.data();

        match kind {
            OpKind::Matmul => {
                let (a, b) = (val(0), val(1));
                let (m, k) = a.dims2()?;
                let n = b.cols();
                if needs(0) {
                    let buf = grad_buf(grads, inputs[0], a);
                    gemm_into(gd, false, b.data(), true, m, n, k, 1.0, buf.data_mut());
                }
                if needs(1) {
                    let buf = grad_buf(grads, inputs[1], b);
                    gemm_into(a.data(), true, gd, false, k, m, n, 1.0, buf.data_mut());
                }
            }
            OpKind::Add | OpKind::Sub => {
                let sign = if *kind == OpKind::Add { 1.0 } else { -1.0 };
                if needs(0) {
                    grad_buf(grads, inputs[0], val(0)).add_assign(g);
                }
                if needs(1) {
                    let b = val(1);
                    let buf = grad_buf(grads, inputs[1], b);
                    if b.len() == g.len() {
                        for (acc, x) in buf.data_mut().iter_mut().zip(gd) {
                            *acc += sign * x;
                        }
                    } else {
                        let k = b.len();
                        let bd = buf.data_mut();
                        for row in gd.chunks_exact(k) {
                            for (acc, x) in bd.iter_mut().zip(row) {
                                *acc += sign * x;
                            }
                        }
                    }
                }
            }
            OpKind::Multiply => {
                for (me, other) in [(0, 1), (1, 0)] {
                    if needs(me) {
                        let o = val(other).data();
                        let buf = grad_buf(grads, inputs[me], val(me));
                        for ((acc, x), y) in buf.data_mut().iter_mut().zip(gd).zip(o) {
                            *acc += x * y;
                        }
                    }
                }
            }
            OpKind::Scale(c) => {
                let buf = grad_buf(grads, inputs[0], val(0));
                for (acc, x) in buf.data_mut().iter_mut().zip(gd) {
                    *acc += c * x;
                }
            }
            OpKind::Offset(_) | OpKind::Reshape(_) => {
                let buf = grad_buf(grads, inputs[0], val(0));
                for (acc, x) in buf.data_mut().iter_mut().zip(gd) {
                    *acc += x;
                }
            }
            OpKind::ConcatCols => {
                let total = out.cols();
                let mut offset = 0;
                for k in 0..inputs.len() {
                    let (r, c) = val(k).dims2()?;
                    if needs(k) {
                        let buf = grad_buf(grads, inputs[k], val(k));
                        let bd = buf.data_mut();
                        for i in 0..r {
                            let src = &gd[i * total + offset..i * total + offset + c];
                            for (acc, x) in bd[i * c..(i + 1) * c].iter_mut().zip(src) {
                                *acc += x;
                            }
                        }
                    }
                    offset += c;
                }
            }
            OpKind::ConcatRows => {
                let mut offset = 0;
                for k in 0..inputs.len() {
                    let n = val(k).len();
                    if needs(k) {
                        let buf = grad_buf(grads, inputs[k], val(k));
                        for (acc, x) in buf.data_mut().iter_mut().zip(&gd[offset..offset + n]) {
                            *acc += x;
                        }
                    }
                    offset += n;
                }
            }
            OpKind::SliceRows { start, .. } => {
                let c = val(0).cols();
                let buf = grad_buf(grads, inputs[0], val(0));
                for (acc, x) in buf.data_mut()[start * c..start * c + gd.len()]
                    .iter_mut()
                    .zip(gd)
                {
                    *acc += x;
                }
            }
            OpKind::SliceCols { start, end } => {
                let (r, c) = val(0).dims2()?;
                let w = end - start;
                let buf = grad_buf(grads, inputs[0], val(0));
                let bd = buf.data_mut();
                for i in 0..r {
                    for (acc, x) in bd[i * c + start..i * c + end]
                        .iter_mut()
                        .zip(&gd[i * w..(i + 1) * w])
                    {
                        *acc += x;
                    }
                }
            }
            OpKind::Sigmoid => {
                let buf = grad_buf(grads, inputs[0], val(0));
                for ((acc, x), y) in buf.data_mut().iter_mut().zip(gd).zip(out.data()) {
                    *acc += x * y * (1.0 - y);
                }
            }
            OpKind::Tanh => {
                let buf = grad_buf(grads, inputs[0], val(0));
                for ((acc, x), y) in buf.data_mut().iter_mut().zip(gd).zip(out.data()) {
                    *acc += x * (1.0 - y * y);
                }
            }
            OpKind::Softplus => {
                let a = val(0).data();
                let buf = grad_buf(grads, inputs[0], val(0));
                for ((acc, x), z) in buf.data_mut().iter_mut().zip(gd).zip(a) {
                    *acc += x * sigmoid(*z);
                }
            }
            OpKind::SoftmaxRows => {
                let c = out.cols();
                let buf = grad_buf(grads, inputs[0], val(0));
                for ((acc, gr), y) in buf
                    .data_mut()
                    .chunks_exact_mut(c)
                    .zip(gd.chunks_exact(c))
                    .zip(out.data().chunks_exact(c))
                {
                    let dot: f64 = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        acc[j] += y[j] * (gr[j] - dot);
                    }
                }
            }
            OpKind::LogSoftmaxRows => {
                let c = out.cols();
                let buf = grad_buf(grads, inputs[0], val(0));
                for ((acc, gr), y) in buf
                    .data_mut()
                    .chunks_exact_mut(c)
                    .zip(gd.chunks_exact(c))
                    .zip(out.data().chunks_exact(c))
                {
                    let total: f64 = gr.iter().sum();
                    for j in 0..c {
                        acc[j] += gr[j] - y[j].exp() * total;
                    }
                }
            }
            OpKind::Log => {
                let a = val(0).data();
                let buf = grad_buf(grads, inputs[0], val(0));
                for ((acc, x), z) in buf.data_mut().iter_mut().zip(gd).zip(a) {
                    *acc += x / z;
                }
            }
            OpKind::Sum | OpKind::Mean => {
                let a = val(0);
                let s = if *kind == OpKind::Mean {
                    gd[0] / a.len() as f64
                } else {
                    gd[0]
                };
                let buf = grad_buf(grads, inputs[0], a);
                for acc in buf.data_mut() {
                    *acc += s;
                }
            }
        }
        Ok(())
    }
}

fn grad_buf<'a>(grads: &'a mut [Option<Tensor>], idx: usize, like: &Tensor) -> &'a mut Tensor {
    grads[idx].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe `log(1 + e^x)`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn broadcast_row(a: &Tensor, b: &Tensor, what: &str) -> Result<bool> {
    if a.shape() == b.shape() {
        return Ok(false);
    }
    let (_, c) = a.dims2()?;
    let b_is_row = matches!(b.shape(), [k] if *k == c) || matches!(b.shape(), [1, k] if *k == c);
    if a.rank() == 2 && b_is_row {
        Ok(true)
    } else {
        Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} neither match nor row-broadcast",
            a.shape(),
            b.shape()
        )))
    }
}

/// Evaluates a primitive without recording it.
pub fn primitive_forward(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    match kind.arity() {
        Some(n) if inputs.len() != n => {
            return Err(Error::contract(format!(
                "{kind:?} takes {n} inputs, got {}",
                inputs.len()
            )))
        }
        None if inputs.is_empty() => {
            return Err(Error::domain(format!("{kind:?} needs at least one input")))
        }
        _ => {}
    }

    match kind {
        OpKind::Matmul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = a.dims2()?;
            let (k2, n) = b.dims2()?;
            if k != k2 {
                return Err(Error::dim(format!(
                    "matmul: {:?} x {:?} inner dimensions {k} != {k2}",
                    a.shape(),
                    b.shape()
                )));
            }
            Tensor::matrix(m, n, gemm(a.data(), false, b.data(), false, m, k, n))
        }
        OpKind::Add | OpKind::Sub => {
            let (a, b) = (inputs[0], inputs[1]);
            let sign = if *kind == OpKind::Add { 1.0 } else { -1.0 };
            if broadcast_row(a, b, "add")? {
                let k = b.len();
                let mut out = a.clone();
                for row in out.data_mut().chunks_exact_mut(k) {
                    for (x, y) in row.iter_mut().zip(b.data()) {
                        *x += sign * y;
                    }
                }
                Ok(out)
            } else {
                a.zip_map(b, |x, y| x + sign * y)
            }
        }
        OpKind::Multiply => inputs[0].zip_map(inputs[1], |x, y| x * y),
        OpKind::Scale(c) => Ok(inputs[0].map(|x| c * x)),
        OpKind::Offset(c) => Ok(inputs[0].map(|x| x + c)),
        OpKind::ConcatCols => {
            let r = inputs[0].rows();
            let mut total = 0;
            for t in inputs {
                let (ri, ci) = t.dims2()?;
                if ri != r {
                    return Err(Error::dim(format!(
                        "concat_cols: row counts differ ({ri} vs {r})"
                    )));
                }
                total += ci;
            }
            let mut data = Vec::with_capacity(r * total);
            for i in 0..r {
                for t in inputs {
                    data.extend_from_slice(t.row(i));
                }
            }
            Tensor::matrix(r, total, data)
        }
        OpKind::ConcatRows => {
            let c = inputs[0].cols();
            let mut rows = 0;
            for t in inputs {
                let (ri, ci) = t.dims2()?;
                if ci != c {
                    return Err(Error::dim(format!(
                        "concat_rows: column counts differ ({ci} vs {c})"
                    )));
                }
                rows += ri;
            }
            let mut data = Vec::with_capacity(rows * c);
            for t in inputs {
                data.extend_from_slice(t.data());
            }
            Tensor::matrix(rows, c, data)
        }
        OpKind::SliceRows { start, end } => {
            let (r, c) = inputs[0].dims2()?;
            if start >= end || *end > r {
                return Err(Error::dim(format!(
                    "slice_rows {start}..{end} out of range for {r} rows"
                )));
            }
            Tensor::matrix(
                end - start,
                c,
                inputs[0].data()[start * c..end * c].to_vec(),
            )
        }
        OpKind::SliceCols { start, end } => {
            let (r, c) = inputs[0].dims2()?;
            if start >= end || *end > c {
                return Err(Error::dim(format!(
                    "slice_cols {start}..{end} out of range for {c} columns"
                )));
            }
            let mut data = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                data.extend_from_slice(&inputs[0].row(i)[*start..*end]);
            }
            Tensor::matrix(r, end - start, data)
        }
        OpKind::Sigmoid => Ok(inputs[0].map(sigmoid)),
        OpKind::Tanh => Ok(inputs[0].map(f64::tanh)),
        OpKind::Softplus => Ok(inputs[0].map(softplus)),
        OpKind::SoftmaxRows | OpKind::LogSoftmaxRows => {
            let a = inputs[0];
            let (_, c) = a.dims2()?;
            if c == 0 || a.is_empty() {
                return Err(Error::domain("softmax of an empty row"));
            }
            let mut out = a.clone();
            for row in out.data_mut().chunks_exact_mut(c) {
                let lse = log_sum_exp(row);
                for x in row.iter_mut() {
                    *x = if *kind == OpKind::SoftmaxRows {
                        (*x - lse).exp()
                    } else {
                        *x - lse
                    };
                }
            }
            Ok(out)
        }
        OpKind::Log => {
            if let Some(bad) = inputs[0].data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
                return Err(Error::domain(format!("log of non-positive value {bad}")));
            }
            Ok(inputs[0].map(f64::ln))
        }
        OpKind::Sum => Ok(Tensor::scalar(inputs[0].sum())),
        OpKind::Mean => {
            if inputs[0].is_empty() {
                return Err(Error::domain("mean of an empty tensor"));
            }
            Ok(Tensor::scalar(inputs[0].sum() / inputs[0].len() as f64))
        }
        OpKind::Reshape(shape) => inputs[0].reshape(shape),
    }
}

/// Maximum over all parameter entries of `|analytic - fd| / max(1, |analytic|)`,
/// where `fd` is the central finite difference with step `step`.
///
/// `f` is called once on a recording tape for the analytic gradient and then
/// twice per parameter entry on fresh tapes. It must be deterministic, so any
/// randomness inside has to be re-seeded identically on every call.
pub fn grad_check<F>(f: F, params: &[(String, Tensor)], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::domain(format!("finite-difference step {step} must be > 0")));
    }
    let eval = |values: &[(String, Tensor)]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|(n, t)| tape.param(n.clone(), t.clone()))
            .collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::domain("function evaluated to a non-finite value"))
        }
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|(n, t)| tape.param(n.clone(), t.clone()))
        .collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item()?.is_finite() {
        return Err(Error::domain("function evaluated to a non-finite value"));
    }
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .ok_or_else(|| Error::State("parameter missing a gradient".into()))?
            .clone();
        for j in 0..params[p].1.len() {
            let orig = params[p].1.data()[j];
            work[p].1.data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work[p].1.data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work[p].1.data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * step);
            let a = analytic.data()[j];
            worst = worst.max((a - fd).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
