//! Reverse-mode differentiation over a linear record of operations.
//!
//! Every op appends a node whose inputs already exist on the tape, so node
//! order is a topological order and the backward sweep is a single reverse
//! pass. A tape is single-owner: build one per training step.

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Softmax(Var, usize),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    IndexRows(Var, Vec<usize>),
    Huber(Var, Var, f64),
    NormalizeRows(Var, f64),
    CausalConv {
        x: Var,
        filter: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
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
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Clamp(..) => "clamp",
            Op::Softmax(..) => "softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::Concat(..) => "concat",
            Op::Narrow(..) => "narrow",
            Op::IndexRows(..) => "index_rows",
            Op::Huber(..) => "huber",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::CausalConv { .. } => "causal_conv",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The computation record.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    checked: bool,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that rejects any op producing NaN or infinity.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            checked: true,
            backward_done: false,
        }
    }

    pub fn unchecked() -> Self {
        Tape {
            checked: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zeros when nothing flowed to it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v).cloned().unwrap_or_else(|| {
            let shape = self.shape(v).to_vec();
            Tensor::from_parts_unchecked(shape.clone(), vec![0.0; shape.iter().product()])
        })
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::from_parts_unchecked(x.shape().to_vec(), data)
    }

    // ---------------------------------------------------------------- ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_map(a, b, |p, q| p + q);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_map(a, b, |p, q| p - q);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_map(a, b, |p, q| p * q);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a vector to every row of a matrix (`[m, n] + [n]`).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sa.len() != 2 || sr.len() != 1 || sa[1] != sr[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: sa.to_vec(),
                rhs: sr.to_vec(),
            });
        }
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for chunk in value.data_mut().chunks_mut(r.len()) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Ln(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    /// `max(x, 0)`; the subgradient at zero is zero.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = kernels::relu(self.value(a));
        self.push(value, Op::Relu(a), &[a])
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let value = kernels::softmax(self.value(a), axis)?;
        self.push(value, Op::Softmax(a, axis), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.numel() as f64);
        self.push(value, Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push(value, Op::Reshape(a), &[a])
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let value = kernels::permute(self.value(a), perm)?;
        self.push(value, Op::Permute(a, perm.to_vec()), &[a])
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.permute(a, &[1, 0])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| TensorError::param("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (p, q))| i == axis || p == q);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let (outer, _, inner) = kernels::split_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::from_parts_unchecked(out_shape, data);
        self.push(value, Op::Concat(inputs.to_vec(), axis), inputs)
    }

    /// The slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::param(
                "narrow",
                format!(
                    "range {start}..{} outside extent {}",
                    start + len,
                    shape[axis]
                ),
            ));
        }
        let (outer, extent, inner) = kernels::split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * extent + start) * inner;
            data.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::from_parts_unchecked(out_shape, data);
        self.push(value, Op::Narrow(a, axis, start), &[a])
    }

    /// Gathers rows of a matrix; repeated indices accumulate in backward.
    pub fn index_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::param("index_rows", "expects a matrix"));
        }
        if indices.is_empty() {
            return Err(TensorError::param("index_rows", "no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[0]) {
            return Err(TensorError::param(
                "index_rows",
                format!("row {bad} out of range for {} rows", shape[0]),
            ));
        }
        let t = self.value(a);
        let data = indices
            .iter()
            .flat_map(|&i| t.row(i).iter().copied())
            .collect();
        let value = Tensor::from_parts_unchecked(vec![indices.len(), shape[1]], data);
        self.push(value, Op::IndexRows(a, indices.to_vec()), &[a])
    }

    /// Mean smooth-L1 loss between `a` and `b` with transition point `delta`.
    pub fn huber(&mut self, a: Var, b: Var, delta: f64) -> Result<Var> {
        self.same_shape("huber", a, b)?;
        if delta <= 0.0 {
            return Err(TensorError::param("huber", "delta must be positive"));
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let total: f64 = x
            .iter()
            .zip(y)
            .map(|(p, q)| {
                let r = (p - q).abs();
                if r < delta {
                    0.5 * r * r / delta
                } else {
                    r - 0.5 * delta
                }
            })
            .sum();
        let value = Tensor::scalar(total / x.len() as f64);
        self.push(value, Op::Huber(a, b, delta), &[a, b])
    }

    /// Scales every row of a matrix to unit L2 norm. A row with norm at or
    /// below `eps` is replaced by the matching row of `fallback` (cycled over
    /// the rows) and receives no gradient.
    pub fn normalize_rows(&mut self, a: Var, fallback: &[f64], eps: f64) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || fallback.is_empty() || !fallback.len().is_multiple_of(shape[1]) {
            return Err(TensorError::param(
                "normalize_rows",
                format!(
                    "fallback of {} values does not tile rows of {:?}",
                    fallback.len(),
                    shape
                ),
            ));
        }
        let cols = shape[1];
        let period = fallback.len() / cols;
        let mut value = self.value(a).clone();
        for (r, row) in value.data_mut().chunks_mut(cols).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > eps {
                row.iter_mut().for_each(|x| *x /= norm);
            } else {
                let k = r % period;
                row.copy_from_slice(&fallback[k * cols..(k + 1) * cols]);
            }
        }
        self.push(value, Op::NormalizeRows(a, eps), &[a])
    }

    /// Per-channel dilated causal convolution along the time axis of a
    /// `[batch, time, nodes, channels]` input with `filter: [channels, taps]`.
    /// With `stride > 1` only every `stride`-th step is kept, aligned so the
    /// last input step is always an output step.
    pub fn causal_conv(
        &mut self,
        x: Var,
        filter: Var,
        bias: Option<Var>,
        dilation: usize,
        stride: usize,
    ) -> Result<Var> {
        if dilation == 0 || stride == 0 {
            return Err(TensorError::param(
                "causal_conv",
                "dilation and stride must be at least 1",
            ));
        }
        let xs = self.shape(x).to_vec();
        let fs = self.shape(filter).to_vec();
        if xs.len() != 4 || fs.len() != 2 || fs[0] != xs[3] {
            return Err(TensorError::ShapeMismatch {
                op: "causal_conv",
                lhs: xs,
                rhs: fs,
            });
        }
        if let Some(b) = bias {
            if self.shape(b) != [xs[3]] {
                return Err(TensorError::ShapeMismatch {
                    op: "causal_conv",
                    lhs: xs,
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let geom = ConvGeometry {
            batch: xs[0],
            time: xs[1],
            nodes: xs[2],
            channels: xs[3],
            taps: fs[1],
            dilation,
            stride,
        };
        let out = kernels::conv_forward(
            &geom,
            self.value(x).data(),
            self.value(filter).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_parts_unchecked(
            vec![geom.batch, geom.out_time(), geom.nodes, geom.channels],
            out,
        );
        let mut inputs = vec![x, filter];
        inputs.extend(bias);
        self.push(
            value,
            Op::CausalConv {
                x,
                filter,
                bias,
                geom,
            },
            &inputs,
        )
    }

    // ----------------------------------------------------------- backward

    /// Accumulates d(loss)/d(node) for every node that requires a gradient.
    ///
    /// Running it a second time without [`Tape::reset_grads`] is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.shape(loss).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(TensorError::Detached);
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::from_parts_unchecked(shape, vec![1.0]));

        for i in (0..=loss.0).rev() {
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf);
            if is_leaf || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn with_shape_of(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::from_parts_unchecked(self.shape(v).to_vec(), data)
    }

    fn unary_grad(&self, a: Var, g: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        // f(input, output) is the local derivative.
        let x = self.value(a).data();
        let data = g
            .data()
            .iter()
            .zip(x)
            .map(|(&gv, &xv)| gv * f(xv, 0.0))
            .collect();
        self.with_shape_of(a, data)
    }

    fn grad_from_output(&self, i: usize, a: Var, g: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
        let y = self.nodes[i].value.data();
        let data = g
            .data()
            .iter()
            .zip(y)
            .map(|(&gv, &yv)| gv * f(yv))
            .collect();
        self.with_shape_of(a, data)
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        // Temporarily take the op so `self` can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(
                        m,
                        n,
                        k,
                        g.data(),
                        false,
                        self.value(b).data(),
                        true,
                        0.0,
                        &mut ga,
                    );
                    self.accumulate(a, Tensor::from_parts_unchecked(sa, ga));
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(
                        k,
                        m,
                        n,
                        self.value(a).data(),
                        true,
                        g.data(),
                        false,
                        0.0,
                        &mut gb,
                    );
                    self.accumulate(b, Tensor::from_parts_unchecked(sb, gb));
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.map(|x| -x));
            }
            &Op::Mul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    let d = g
                        .data()
                        .iter()
                        .zip(self.value(b).data())
                        .map(|(p, q)| p * q)
                        .collect();
                    let t = self.with_shape_of(a, d);
                    self.accumulate(a, t);
                }
                if self.nodes[b.0].requires_grad {
                    let d = g
                        .data()
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(p, q)| p * q)
                        .collect();
                    let t = self.with_shape_of(b, d);
                    self.accumulate(b, t);
                }
            }
            &Op::AddRow(a, row) => {
                self.accumulate(a, g.clone());
                if self.nodes[row.0].requires_grad {
                    let n = self.shape(row)[0];
                    let mut acc = vec![0.0; n];
                    for chunk in g.data().chunks(n) {
                        for (s, x) in acc.iter_mut().zip(chunk) {
                            *s += x;
                        }
                    }
                    let t = self.with_shape_of(row, acc);
                    self.accumulate(row, t);
                }
            }
            &Op::Scale(a, c) => self.accumulate(a, g.map(|x| x * c)),
            &Op::AddScalar(a) => self.accumulate(a, g.clone()),
            &Op::Exp(a) => {
                let t = self.grad_from_output(i, a, g, |y| y);
                self.accumulate(a, t);
            }
            &Op::Ln(a) => {
                let t = self.unary_grad(a, g, |x, _| 1.0 / x);
                self.accumulate(a, t);
            }
            &Op::Tanh(a) => {
                let t = self.grad_from_output(i, a, g, |y| 1.0 - y * y);
                self.accumulate(a, t);
            }
            &Op::Sigmoid(a) => {
                let t = self.grad_from_output(i, a, g, |y| y * (1.0 - y));
                self.accumulate(a, t);
            }
            &Op::Relu(a) => {
                let t = self.unary_grad(a, g, |x, _| if x > 0.0 { 1.0 } else { 0.0 });
                self.accumulate(a, t);
            }
            &Op::Clamp(a, lo, hi) => {
                let t = self.unary_grad(a, g, |x, _| if x > lo && x < hi { 1.0 } else { 0.0 });
                self.accumulate(a, t);
            }
            &Op::Softmax(a, axis) => {
                let y = &self.nodes[i].value;
                let (outer, len, inner) = kernels::split_axis(y.shape(), axis);
                let (yd, gd) = (y.data(), g.data());
                let mut out = vec![0.0; yd.len()];
                for o in 0..outer {
                    for k in 0..inner {
                        let base = o * len * inner + k;
                        let dot: f64 = (0..len)
                            .map(|j| yd[base + j * inner] * gd[base + j * inner])
                            .sum();
                        for j in 0..len {
                            let p = base + j * inner;
                            out[p] = yd[p] * (gd[p] - dot);
                        }
                    }
                }
                let t = self.with_shape_of(a, out);
                self.accumulate(a, t);
            }
            &Op::Sum(a) => {
                let gv = g.data()[0];
                let t = self.with_shape_of(a, vec![gv; self.value(a).numel()]);
                self.accumulate(a, t);
            }
            &Op::Mean(a) => {
                let n = self.value(a).numel();
                let gv = g.data()[0] / n as f64;
                let t = self.with_shape_of(a, vec![gv; n]);
                self.accumulate(a, t);
            }
            &Op::Reshape(a) => {
                let t = self.with_shape_of(a, g.data().to_vec());
                self.accumulate(a, t);
            }
            Op::Permute(a, perm) => {
                let t = kernels::permute(g, &kernels::inverse_permutation(perm))
                    .expect("valid permutation");
                self.accumulate(*a, t);
            }
            Op::Concat(inputs, axis) => {
                let (outer, _, inner) = kernels::split_axis(g.shape(), *axis);
                let total = g.shape()[*axis];
                let mut offset = 0;
                for &v in inputs {
                    let extent = self.shape(v)[*axis];
                    if self.nodes[v.0].requires_grad {
                        let mut d = Vec::with_capacity(outer * extent * inner);
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            d.extend_from_slice(&g.data()[from..from + extent * inner]);
                        }
                        let t = self.with_shape_of(v, d);
                        self.accumulate(v, t);
                    }
                    offset += extent;
                }
            }
            &Op::Narrow(a, axis, start) => {
                let shape = self.shape(a).to_vec();
                let (outer, extent, inner) = kernels::split_axis(&shape, axis);
                let len = g.shape()[axis];
                let mut d = vec![0.0; shape.iter().product()];
                for o in 0..outer {
                    let to = (o * extent + start) * inner;
                    let from = o * len * inner;
                    d[to..to + len * inner].copy_from_slice(&g.data()[from..from + len * inner]);
                }
                self.accumulate(a, Tensor::from_parts_unchecked(shape, d));
            }
            Op::IndexRows(a, indices) => {
                let shape = self.shape(*a).to_vec();
                let cols = shape[1];
                let mut d = vec![0.0; shape[0] * cols];
                for (r, &src) in indices.iter().enumerate() {
                    for c in 0..cols {
                        d[src * cols + c] += g.data()[r * cols + c];
                    }
                }
                self.accumulate(*a, Tensor::from_parts_unchecked(shape, d));
            }
            &Op::Huber(a, b, delta) => {
                let n = self.value(a).numel() as f64;
                let gv = g.data()[0] / n;
                let d: Vec<f64> = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(p, q)| {
                        let r = p - q;
                        gv * if r.abs() < delta {
                            r / delta
                        } else {
                            r.signum()
                        }
                    })
                    .collect();
                let neg = d.iter().map(|x| -x).collect();
                let ta = self.with_shape_of(a, d);
                let tb = self.with_shape_of(b, neg);
                self.accumulate(a, ta);
                self.accumulate(b, tb);
            }
            &Op::NormalizeRows(a, eps) => {
                let cols = self.shape(a)[1];
                let x = self.value(a).data();
                let y = self.nodes[i].value.data();
                let mut d = vec![0.0; x.len()];
                for r in 0..x.len() / cols {
                    let span = r * cols..(r + 1) * cols;
                    let norm = x[span.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm <= eps {
                        continue;
                    }
                    let gr = &g.data()[span.clone()];
                    let yr = &y[span.clone()];
                    let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                    for c in 0..cols {
                        d[r * cols + c] = (gr[c] - yr[c] * dot) / norm;
                    }
                }
                let t = self.with_shape_of(a, d);
                self.accumulate(a, t);
            }
            Op::CausalConv {
                x,
                filter,
                bias,
                geom,
            } => {
                let (gx, gf, gb) = kernels::conv_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*filter).data(),
                    g.data(),
                );
                let tx = self.with_shape_of(*x, gx);
                let tf = self.with_shape_of(*filter, gf);
                self.accumulate(*x, tx);
                self.accumulate(*filter, tf);
                if let Some(b) = *bias {
                    let tb = self.with_shape_of(b, gb);
                    self.accumulate(b, tb);
                }
            }
        }
        self.nodes[i].op = op;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
