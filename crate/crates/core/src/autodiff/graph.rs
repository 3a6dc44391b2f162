//! Define-then-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built by appending primitives; every node's shape is
//! inferred (and checked) at build time. [`Graph::forward`] evaluates the
//! whole tape for a set of input tensors, after which [`Graph::backward`]
//! propagates seed gradients from any number of nodes back to the inputs.
//! Nodes are appended in order, so the node list is already topologically
//! sorted.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input {
        slot: usize,
    },
    Constant(Tensor),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    OneMinus(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Prelu(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: [usize; 2],
        padding: [usize; 2],
    },
    MaxPool2d {
        input: NodeId,
        window: [usize; 2],
    },
    Concat(Vec<NodeId>),
    SliceRows {
        input: NodeId,
        start: usize,
        len: usize,
    },
    SliceCols {
        input: NodeId,
        start: usize,
        len: usize,
    },
    ToSequence(NodeId),
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    LogSumExp(NodeId),
}

impl Op {
    fn operands(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Input { .. } | Constant(_) => vec![],
            MatMul(a, b) | AddBias(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Prelu(a, b) => {
                vec![*a, *b]
            }
            Scale(a, _)
            | OneMinus(a)
            | Tanh(a)
            | Sigmoid(a)
            | ToSequence(a)
            | Reshape(a)
            | Sum(a)
            | Mean(a)
            | LogSumExp(a) => vec![*a],
            Conv2d {
                input,
                kernel,
                bias,
                ..
            } => vec![*input, *kernel, *bias],
            MaxPool2d { input, .. } | SliceRows { input, .. } | SliceCols { input, .. } => {
                vec![*input]
            }
            Concat(parts) => parts.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    needs_grad: bool,
}

#[derive(Clone, Debug)]
struct InputSpec {
    node: NodeId,
    shape: Vec<usize>,
    requires_grad: bool,
}

/// Gradients of the graph inputs, indexed by input slot.
#[derive(Clone, Debug)]
pub struct Gradients {
    input_nodes: Vec<NodeId>,
    by_slot: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for an input node; `None` if the input does not require grad.
    pub fn of(&self, node: NodeId) -> Option<&Tensor> {
        let slot = self.input_nodes.iter().position(|&n| n == node)?;
        self.by_slot[slot].as_ref()
    }

    pub fn slot(&self, slot: usize) -> Option<&Tensor> {
        self.by_slot.get(slot).and_then(|t| t.as_ref())
    }

    pub fn into_slots(self) -> Vec<Option<Tensor>> {
        self.by_slot
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: Vec<InputSpec>,
    values: Option<Vec<Tensor>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
}

fn dims2(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::shape(format!(
            "{what} expects a matrix, got {shape:?}"
        ))),
    }
}

fn dims3(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(Error::shape(format!(
            "{what} expects rank 3, got {shape:?}"
        ))),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn shape(&self, node: NodeId) -> &[usize] {
        &self.nodes[node.0].shape
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let needs_grad = match &op {
            Op::Input { slot } => self.inputs[*slot].requires_grad,
            other => other.operands().iter().any(|n| self.nodes[n.0].needs_grad),
        };
        self.values = None;
        self.nodes.push(Node {
            op,
            shape,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, node: NodeId) -> Result<&[usize]> {
        self.nodes
            .get(node.0)
            .map(|n| n.shape.as_slice())
            .ok_or_else(|| Error::shape(format!("unknown node {}", node.0)))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<Vec<usize>> {
        let sa = self.check(a)?;
        let sb = self.check(b)?;
        if sa != sb {
            return Err(Error::shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(sa.to_vec())
    }

    /// Declares a graph input. Inputs are bound positionally in `forward`.
    pub fn input(&mut self, shape: &[usize], requires_grad: bool) -> NodeId {
        let slot = self.inputs.len();
        self.inputs.push(InputSpec {
            node: NodeId(self.nodes.len()),
            shape: shape.to_vec(),
            requires_grad,
        });
        self.push(Op::Input { slot }, shape.to_vec())
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(value), shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = dims2(self.check(a)?, "matmul lhs")?;
        let (k2, n) = dims2(self.check(b)?, "matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul inner dims {k} vs {k2}")));
        }
        Ok(self.push(Op::MatMul(a, b), vec![m, n]))
    }

    /// `a[m, n] + bias[n]` broadcast over rows.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = dims2(self.check(a)?, "add_bias")?;
        let sb = self.check(bias)?;
        if sb != [n] {
            return Err(Error::shape(format!("bias {sb:?} for {m}x{n} input")));
        }
        Ok(self.push(Op::AddBias(a, bias), vec![m, n]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape(a, b, "add")?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape(a, b, "sub")?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape(a, b, "mul")?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let s = self.check(a)?.to_vec();
        Ok(self.push(Op::Scale(a, factor), s))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.check(a)?.to_vec();
        Ok(self.push(Op::OneMinus(a), s))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.check(a)?.to_vec();
        Ok(self.push(Op::Tanh(a), s))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.check(a)?.to_vec();
        Ok(self.push(Op::Sigmoid(a), s))
    }

    /// PReLU with a single learnable slope (`slope` has shape `[1]`).
    pub fn prelu(&mut self, a: NodeId, slope: NodeId) -> Result<NodeId> {
        let s = self.check(a)?.to_vec();
        let ss = self.check(slope)?;
        if ss != [1] {
            return Err(Error::shape(format!("prelu slope must be [1], got {ss:?}")));
        }
        Ok(self.push(Op::Prelu(a, slope), s))
    }

    /// 2-D convolution over `[C, H, W]` with kernel `[O, C, kh, kw]` and bias `[O]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: [usize; 2],
        padding: [usize; 2],
    ) -> Result<NodeId> {
        let (c, h, w) = dims3(self.check(input)?, "conv2d input")?;
        let ks = self.check(kernel)?.to_vec();
        let [o, kc, kh, kw] = ks[..] else {
            return Err(Error::shape(format!(
                "conv2d kernel must be rank 4, got {ks:?}"
            )));
        };
        if kc != c {
            return Err(Error::shape(format!("conv2d channels {c} vs kernel {kc}")));
        }
        if self.check(bias)? != [o] {
            return Err(Error::shape("conv2d bias must be [out_channels]"));
        }
        if stride[0] == 0 || stride[1] == 0 {
            return Err(Error::shape("conv2d stride must be positive"));
        }
        let (ho, wo) = match (
            conv_out_len(h, kh, stride[0], padding[0]),
            conv_out_len(w, kw, stride[1], padding[1]),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::shape(format!(
                    "conv2d input {h}x{w} smaller than kernel {kh}x{kw}"
                )))
            }
        };
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            vec![o, ho, wo],
        ))
    }

    /// Non-overlapping max pooling over `[C, H, W]`; trailing rows/cols are dropped.
    pub fn max_pool2d(&mut self, input: NodeId, window: [usize; 2]) -> Result<NodeId> {
        let (c, h, w) = dims3(self.check(input)?, "max_pool2d")?;
        if window[0] == 0 || window[1] == 0 || h < window[0] || w < window[1] {
            return Err(Error::shape(format!(
                "pool window {window:?} does not fit {h}x{w}"
            )));
        }
        Ok(self.push(
            Op::MaxPool2d { input, window },
            vec![c, h / window[0], w / window[1]],
        ))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat of nothing"));
        }
        let (rows, _) = dims2(self.check(parts[0])?, "concat")?;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = dims2(self.check(p)?, "concat")?;
            if r != rows {
                return Err(Error::shape(format!("concat rows {r} vs {rows}")));
            }
            cols += c;
        }
        Ok(self.push(Op::Concat(parts.to_vec()), vec![rows, cols]))
    }

    pub fn slice_rows(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = dims2(self.check(input)?, "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(Error::shape(format!("row slice {start}+{len} of {r}")));
        }
        Ok(self.push(Op::SliceRows { input, start, len }, vec![len, c]))
    }

    pub fn slice_cols(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = dims2(self.check(input)?, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::shape(format!("col slice {start}+{len} of {c}")));
        }
        Ok(self.push(Op::SliceCols { input, start, len }, vec![r, len]))
    }

    /// `[C, T, F]` feature map to a `[T, C*F]` sequence (channel-major per step).
    pub fn to_sequence(&mut self, input: NodeId) -> Result<NodeId> {
        let (c, t, f) = dims3(self.check(input)?, "to_sequence")?;
        Ok(self.push(Op::ToSequence(input), vec![t, c * f]))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let s = self.check(input)?;
        if s.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!("reshape {s:?} into {shape:?}")));
        }
        Ok(self.push(Op::Reshape(input), shape.to_vec()))
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        Ok(self.push(Op::Sum(input), vec![1]))
    }

    pub fn mean(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        Ok(self.push(Op::Mean(input), vec![1]))
    }

    /// Row-wise `log(sum(exp(x)))` of an `[m, n]` matrix, computed with max subtraction.
    pub fn log_sum_exp(&mut self, input: NodeId) -> Result<NodeId> {
        let (m, _) = dims2(self.check(input)?, "log_sum_exp")?;
        Ok(self.push(Op::LogSumExp(input), vec![m]))
    }

    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        self.values.as_ref().and_then(|v| v.get(node.0))
    }

    /// Evaluates every node for the given inputs (bound by slot order).
    pub fn forward(&mut self, inputs: &[Tensor]) -> Result<()> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::shape(format!(
                "graph has {} inputs, got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        for (spec, t) in self.inputs.iter().zip(inputs) {
            if spec.shape != t.shape() {
                return Err(Error::shape(format!(
                    "input expects {:?}, got {:?}",
                    spec.shape,
                    t.shape()
                )));
            }
        }
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut argmax = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            let v = |id: &NodeId| &values[id.0];
            let out = match &node.op {
                Op::Input { slot } => inputs[*slot].clone(),
                Op::Constant(t) => t.clone(),
                Op::MatMul(a, b) => {
                    let (m, k) = dims2(v(a).shape(), "")?;
                    let n = v(b).shape()[1];
                    Tensor::matrix(m, n, matmul(v(a).data(), v(b).data(), m, k, n))
                }
                Op::AddBias(a, b) => {
                    let n = node.shape[1];
                    let bias = v(b).data();
                    let data = v(a)
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, x)| x + bias[i % n])
                        .collect();
                    Tensor::new(node.shape.clone(), data)?
                }
                Op::Add(a, b) => zip_map(v(a), v(b), |x, y| x + y),
                Op::Sub(a, b) => zip_map(v(a), v(b), |x, y| x - y),
                Op::Mul(a, b) => zip_map(v(a), v(b), |x, y| x * y),
                Op::Scale(a, f) => map(v(a), |x| x * f),
                Op::OneMinus(a) => map(v(a), |x| 1.0 - x),
                Op::Tanh(a) => map(v(a), f64::tanh),
                Op::Sigmoid(a) => map(v(a), sigmoid),
                Op::Prelu(a, s) => {
                    let slope = v(s).item();
                    map(v(a), |x| if x >= 0.0 { x } else { slope * x })
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let geo =
                        ConvGeometry::new(v(input).shape(), v(kernel).shape(), *stride, *padding);
                    let data =
                        conv2d_forward(&geo, v(input).data(), v(kernel).data(), v(bias).data());
                    Tensor::new(node.shape.clone(), data)?
                }
                Op::MaxPool2d { input, window } => {
                    let (data, idx_of) = max_pool_forward(v(input), *window, &node.shape);
                    argmax[idx] = Some(idx_of);
                    Tensor::new(node.shape.clone(), data)?
                }
                Op::Concat(parts) => {
                    let rows = node.shape[0];
                    let mut data = Vec::with_capacity(rows * node.shape[1]);
                    for r in 0..rows {
                        for p in parts {
                            data.extend_from_slice(v(p).row(r));
                        }
                    }
                    Tensor::new(node.shape.clone(), data)?
                }
                Op::SliceRows { input, start, len } => {
                    let c = node.shape[1];
                    let src = v(input).data();
                    Tensor::new(
                        node.shape.clone(),
                        src[start * c..(start + len) * c].to_vec(),
                    )?
                }
                Op::SliceCols { input, start, len } => {
                    let src = v(input);
                    let mut data = Vec::with_capacity(node.shape[0] * len);
                    for r in 0..node.shape[0] {
                        data.extend_from_slice(&src.row(r)[*start..start + len]);
                    }
                    Tensor::new(node.shape.clone(), data)?
                }
                Op::ToSequence(input) => {
                    let (c, t, f) = dims3(v(input).shape(), "")?;
                    let src = v(input).data();
                    let mut data = vec![0.0; c * t * f];
                    for ci in 0..c {
                        for ti in 0..t {
                            let from = (ci * t + ti) * f;
                            let to = ti * c * f + ci * f;
                            data[to..to + f].copy_from_slice(&src[from..from + f]);
                        }
                    }
                    Tensor::new(node.shape.clone(), data)?
                }
                Op::Reshape(input) => v(input).clone().reshape(node.shape.clone())?,
                Op::Sum(a) => Tensor::scalar(v(a).data().iter().sum()),
                Op::Mean(a) => {
                    let t = v(a);
                    Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64)
                }
                Op::LogSumExp(a) => {
                    let t = v(a);
                    let data = (0..t.rows()).map(|r| log_sum_exp(t.row(r))).collect();
                    Tensor::vector(data)
                }
            };
            values.push(out);
        }
        self.values = Some(values);
        self.pool_argmax = argmax;
        Ok(())
    }

    /// Runs `forward` and returns a copy of `output`'s value.
    pub fn eval(&mut self, inputs: &[Tensor], output: NodeId) -> Result<Tensor> {
        self.forward(inputs)?;
        Ok(self.values.as_ref().expect("just evaluated")[output.0].clone())
    }

    /// Propagates `seeds` (node, d output / d node) to every input that requires grad.
    /// Contributions from several seeds and from fan-out are summed.
    pub fn backward(&self, seeds: &[(NodeId, &Tensor)]) -> Result<Gradients> {
        let values = self.values.as_ref().ok_or(Error::BackwardBeforeForward)?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (node, g) in seeds {
            let shape = self.check(*node)?;
            if shape != g.shape() {
                return Err(Error::shape(format!(
                    "seed gradient {:?} for node of shape {:?}",
                    g.shape(),
                    shape
                )));
            }
            accumulate(&mut grads[node.0], g.data());
        }

        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let wants = |id: &NodeId| self.nodes[id.0].needs_grad;
            let val = |id: &NodeId| &values[id.0];
            match &node.op {
                Op::Input { .. } => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Constant(_) => {}
                Op::MatMul(a, b) => {
                    let (m, k) = dims2(val(a).shape(), "")?;
                    let n = node.shape[1];
                    if wants(a) {
                        let da = matmul_bt(&g, val(b).data(), m, n, k);
                        accumulate(&mut grads[a.0], &da);
                    }
                    if wants(b) {
                        let db = matmul_at(val(a).data(), &g, m, k, n);
                        accumulate(&mut grads[b.0], &db);
                    }
                }
                Op::AddBias(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], &g);
                    }
                    if wants(b) {
                        let n = node.shape[1];
                        let mut db = vec![0.0; n];
                        for (i, gi) in g.iter().enumerate() {
                            db[i % n] += gi;
                        }
                        accumulate(&mut grads[b.0], &db);
                    }
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], &g);
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], &g);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], &g);
                    }
                    if wants(b) {
                        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                        accumulate(&mut grads[b.0], &neg);
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        let d: Vec<f64> = g.iter().zip(val(b).data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads[a.0], &d);
                    }
                    if wants(b) {
                        let d: Vec<f64> = g.iter().zip(val(a).data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads[b.0], &d);
                    }
                }
                Op::Scale(a, f) => {
                    let d: Vec<f64> = g.iter().map(|x| x * f).collect();
                    accumulate(&mut grads[a.0], &d);
                }
                Op::OneMinus(a) => {
                    let d: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Tanh(a) => {
                    let out = values[idx].data();
                    let d: Vec<f64> = g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect();
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Sigmoid(a) => {
                    let out = values[idx].data();
                    let d: Vec<f64> = g.iter().zip(out).map(|(x, y)| x * y * (1.0 - y)).collect();
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Prelu(a, s) => {
                    let slope = val(s).item();
                    let x = val(a).data();
                    if wants(a) {
                        let d: Vec<f64> = g
                            .iter()
                            .zip(x)
                            .map(|(gi, xi)| if *xi >= 0.0 { *gi } else { gi * slope })
                            .collect();
                        accumulate(&mut grads[a.0], &d);
                    }
                    if wants(s) {
                        let ds: f64 = g
                            .iter()
                            .zip(x)
                            .filter(|(_, xi)| **xi < 0.0)
                            .map(|(gi, xi)| gi * xi)
                            .sum();
                        accumulate(&mut grads[s.0], &[ds]);
                    }
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let geo = ConvGeometry::new(
                        val(input).shape(),
                        val(kernel).shape(),
                        *stride,
                        *padding,
                    );
                    let (di, dk, db) = conv2d_backward(
                        &geo,
                        val(input).data(),
                        val(kernel).data(),
                        &g,
                        wants(input),
                    );
                    if let Some(di) = di {
                        accumulate(&mut grads[input.0], &di);
                    }
                    if wants(kernel) {
                        accumulate(&mut grads[kernel.0], &dk);
                    }
                    if wants(bias) {
                        accumulate(&mut grads[bias.0], &db);
                    }
                }
                Op::MaxPool2d { input, .. } => {
                    let src = self.pool_argmax[idx]
                        .as_ref()
                        .expect("pool argmax recorded in forward");
                    let mut d = vec![0.0; val(input).len()];
                    for (gi, &at) in g.iter().zip(src) {
                        d[at] += gi;
                    }
                    accumulate(&mut grads[input.0], &d);
                }
                Op::Concat(parts) => {
                    let rows = node.shape[0];
                    let total = node.shape[1];
                    let mut offset = 0;
                    for p in parts {
                        let c = self.nodes[p.0].shape[1];
                        if wants(p) {
                            let mut d = Vec::with_capacity(rows * c);
                            for r in 0..rows {
                                d.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                            }
                            accumulate(&mut grads[p.0], &d);
                        }
                        offset += c;
                    }
                }
                Op::SliceRows { input, start, .. } => {
                    let c = node.shape[1];
                    let slot = grads[input.0].get_or_insert_with(|| vec![0.0; val(input).len()]);
                    for (dst, gi) in slot[start * c..].iter_mut().zip(&g) {
                        *dst += gi;
                    }
                }
                Op::SliceCols { input, start, len } => {
                    let cols = self.nodes[input.0].shape[1];
                    let slot = grads[input.0].get_or_insert_with(|| vec![0.0; val(input).len()]);
                    for r in 0..node.shape[0] {
                        for j in 0..*len {
                            slot[r * cols + start + j] += g[r * len + j];
                        }
                    }
                }
                Op::ToSequence(input) => {
                    let (c, t, f) = dims3(val(input).shape(), "")?;
                    let mut d = vec![0.0; c * t * f];
                    for ci in 0..c {
                        for ti in 0..t {
                            let to = (ci * t + ti) * f;
                            let from = ti * c * f + ci * f;
                            d[to..to + f].copy_from_slice(&g[from..from + f]);
                        }
                    }
                    accumulate(&mut grads[input.0], &d);
                }
                Op::Reshape(input) => accumulate(&mut grads[input.0], &g),
                Op::Sum(a) => {
                    let d = vec![g[0]; val(a).len()];
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Mean(a) => {
                    let n = val(a).len();
                    let d = vec![g[0] / n as f64; n];
                    accumulate(&mut grads[a.0], &d);
                }
                Op::LogSumExp(a) => {
                    let x = val(a);
                    let out = values[idx].data();
                    let n = x.cols();
                    let mut d = vec![0.0; x.len()];
                    for r in 0..x.rows() {
                        for j in 0..n {
                            d[r * n + j] = g[r] * (x.data()[r * n + j] - out[r]).exp();
                        }
                    }
                    accumulate(&mut grads[a.0], &d);
                }
            }
        }

        let by_slot = self
            .inputs
            .iter()
            .map(|spec| {
                if !spec.requires_grad {
                    return None;
                }
                let data = grads[spec.node.0]
                    .take()
                    .unwrap_or_else(|| vec![0.0; spec.shape.iter().product()]);
                Some(Tensor::new(spec.shape.clone(), data).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients {
            input_nodes: self.inputs.iter().map(|s| s.node).collect(),
            by_slot,
        })
    }

    /// Convenience for a single seed.
    pub fn backward_from(&self, output: NodeId, grad: &Tensor) -> Result<Gradients> {
        self.backward(&[(output, grad)])
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

/// Numerically stable `log(sum(exp(row)))`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Output length of a padded, strided convolution; `None` when the kernel does not fit.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if padded < kernel || stride == 0 {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// `[m, k] x [k, n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `g[m, n] x b[k, n]^T`.
fn matmul_bt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = gi
                .iter()
                .zip(&b[p * n..(p + 1) * n])
                .map(|(x, y)| x * y)
                .sum();
        }
    }
    out
}

/// `a[m, k]^T x g[m, n]`.
fn matmul_at(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, gv) in out[p * n..(p + 1) * n].iter_mut().zip(gi) {
                *o += aip * gv;
            }
        }
    }
    out
}

struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: [usize; 2],
    padding: [usize; 2],
}

impl ConvGeometry {
    fn new(input: &[usize], kernel: &[usize], stride: [usize; 2], padding: [usize; 2]) -> Self {
        let (c, h, w) = (input[0], input[1], input[2]);
        let (o, kh, kw) = (kernel[0], kernel[2], kernel[3]);
        Self {
            c,
            h,
            w,
            o,
            kh,
            kw,
            ho: conv_out_len(h, kh, stride[0], padding[0]).expect("checked at build"),
            wo: conv_out_len(w, kw, stride[1], padding[1]).expect("checked at build"),
            stride,
            padding,
        }
    }

    /// Valid (input offset, kernel offset) pairs along one axis for output position `out`.
    #[inline]
    fn taps(out: usize, stride: usize, pad: usize, k: usize, len: usize) -> (usize, usize) {
        // first kernel index whose input index is >= 0, and one past the last valid one
        let base = out * stride;
        let lo = pad.saturating_sub(base);
        let hi = (len + pad).saturating_sub(base).min(k);
        (lo, hi.max(lo))
    }
}

fn conv2d_forward(geo: &ConvGeometry, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; geo.o * geo.ho * geo.wo];
    for o in 0..geo.o {
        for y in 0..geo.ho {
            let (ky0, ky1) = ConvGeometry::taps(y, geo.stride[0], geo.padding[0], geo.kh, geo.h);
            for x in 0..geo.wo {
                let (kx0, kx1) =
                    ConvGeometry::taps(x, geo.stride[1], geo.padding[1], geo.kw, geo.w);
                let mut acc = bias[o];
                for c in 0..geo.c {
                    let kbase = (o * geo.c + c) * geo.kh;
                    for ky in ky0..ky1 {
                        let iy = y * geo.stride[0] + ky - geo.padding[0];
                        let irow = &input[(c * geo.h + iy) * geo.w..];
                        let krow = &kernel[(kbase + ky) * geo.kw..];
                        let ix0 = x * geo.stride[1] + kx0 - geo.padding[1];
                        for (kx, ix) in (kx0..kx1).zip(ix0..) {
                            acc += irow[ix] * krow[kx];
                        }
                    }
                }
                out[(o * geo.ho + y) * geo.wo + x] = acc;
            }
        }
    }
    out
}

type ConvGrads = (Option<Vec<f64>>, Vec<f64>, Vec<f64>);

fn conv2d_backward(
    geo: &ConvGeometry,
    input: &[f64],
    kernel: &[f64],
    g: &[f64],
    want_input: bool,
) -> ConvGrads {
    let mut di = want_input.then(|| vec![0.0; input.len()]);
    let mut dk = vec![0.0; kernel.len()];
    let mut db = vec![0.0; geo.o];
    for o in 0..geo.o {
        for y in 0..geo.ho {
            let (ky0, ky1) = ConvGeometry::taps(y, geo.stride[0], geo.padding[0], geo.kh, geo.h);
            for x in 0..geo.wo {
                let gv = g[(o * geo.ho + y) * geo.wo + x];
                if gv == 0.0 {
                    continue;
                }
                db[o] += gv;
                let (kx0, kx1) =
                    ConvGeometry::taps(x, geo.stride[1], geo.padding[1], geo.kw, geo.w);
                let ix0 = x * geo.stride[1] + kx0 - geo.padding[1];
                for c in 0..geo.c {
                    let kbase = (o * geo.c + c) * geo.kh;
                    for ky in ky0..ky1 {
                        let iy = y * geo.stride[0] + ky - geo.padding[0];
                        let ioff = (c * geo.h + iy) * geo.w;
                        let koff = (kbase + ky) * geo.kw;
                        for (kx, ix) in (kx0..kx1).zip(ix0..) {
                            dk[koff + kx] += gv * input[ioff + ix];
                            if let Some(di) = di.as_mut() {
                                di[ioff + ix] += gv * kernel[koff + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    (di, dk, db)
}

fn max_pool_forward(
    input: &Tensor,
    window: [usize; 2],
    out_shape: &[usize],
) -> (Vec<f64>, Vec<usize>) {
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let (c, ho, wo) = (out_shape[0], out_shape[1], out_shape[2]);
    let src = input.data();
    let mut data = Vec::with_capacity(c * ho * wo);
    let mut idx = Vec::with_capacity(c * ho * wo);
    for ci in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for dy in 0..window[0] {
                    for dx in 0..window[1] {
                        let i = (ci * h + y * window[0] + dy) * w + x * window[1] + dx;
                        if src[i] > best {
                            best = src[i];
                            at = i;
                        }
                    }
                }
                data.push(best);
                idx.push(at);
            }
        }
    }
    (data, idx)
}
