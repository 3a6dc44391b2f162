//! CNN -> bidirectional GRU -> FC1 (PReLU) -> FC2 forward and backward passes.
//!
//! Every utterance is encoded on its own valid frames, so padding in a batch
//! can never leak into another utterance's features.

use std::collections::hash_map::{Entry, HashMap};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::model::params::{param_layout, GruSlots, ParamSlots};
use crate::model::{EncoderConfig, ModelParams};

/// Zero-padded spectrograms of a batch with per-utterance valid frame counts.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramBatch {
    values: Vec<f64>,
    lengths: Vec<usize>,
    max_frames: usize,
    n_bins: usize,
}

impl SpectrogramBatch {
    pub fn from_spectrograms<'a, I>(specs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Spectrogram>,
    {
        let specs: Vec<&Spectrogram> = specs.into_iter().collect();
        let first = specs.first().ok_or_else(|| Error::shape("empty batch"))?;
        let n_bins = first.n_bins();
        if specs.iter().any(|s| s.n_bins() != n_bins) {
            return Err(Error::shape("spectrograms in a batch must share n_bins"));
        }
        let max_frames = specs.iter().map(|s| s.n_frames()).max().unwrap_or(0);
        let mut values = vec![0.0; specs.len() * max_frames * n_bins];
        for (i, s) in specs.iter().enumerate() {
            let off = i * max_frames * n_bins;
            values[off..off + s.values().len()].copy_from_slice(s.values());
        }
        Ok(Self {
            values,
            lengths: specs.iter().map(|s| s.n_frames()).collect(),
            max_frames,
            n_bins,
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn max_frames(&self) -> usize {
        self.max_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// `mask[i][t]` is true for valid frames.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.lengths
            .iter()
            .map(|&l| (0..self.max_frames).map(|t| t < l).collect())
            .collect()
    }

    /// Padded slot `t` of utterance `i`.
    pub fn frame(&self, i: usize, t: usize) -> &[f64] {
        let off = (i * self.max_frames + t) * self.n_bins;
        &self.values[off..off + self.n_bins]
    }

    pub fn frame_mut(&mut self, i: usize, t: usize) -> &mut [f64] {
        let off = (i * self.max_frames + t) * self.n_bins;
        &mut self.values[off..off + self.n_bins]
    }

    /// Valid frames of utterance `i` as a `[1, T, F]` tensor.
    fn utterance(&self, i: usize) -> Tensor {
        let off = i * self.max_frames * self.n_bins;
        let len = self.lengths[i];
        Tensor::new(
            vec![1, len, self.n_bins],
            self.values[off..off + len * self.n_bins].to_vec(),
        )
        .expect("batch layout")
    }
}

/// Zero-padded conv-stack outputs, one `[T'_i, D]` sequence per utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    steps: Vec<Tensor>,
    lengths: Vec<usize>,
    max_steps: usize,
    dim: usize,
}

impl SequenceBatch {
    pub fn from_sequences(steps: Vec<Tensor>) -> Result<Self> {
        let dim = steps
            .first()
            .map(|s| s.cols())
            .ok_or_else(|| Error::shape("empty batch"))?;
        if steps
            .iter()
            .any(|s| s.shape().len() != 2 || s.cols() != dim)
        {
            return Err(Error::shape("sequences must be [T, D] with a shared D"));
        }
        let lengths: Vec<usize> = steps.iter().map(|s| s.rows()).collect();
        Ok(Self {
            max_steps: lengths.iter().copied().max().unwrap_or(0),
            lengths,
            steps,
            dim,
        })
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.lengths
            .iter()
            .map(|&l| (0..self.max_steps).map(|t| t < l).collect())
            .collect()
    }

    /// Valid steps of utterance `i`.
    pub fn sequence(&self, i: usize) -> &Tensor {
        &self.steps[i]
    }

    /// Step `t` of utterance `i`, zero for padding.
    pub fn step(&self, i: usize, t: usize) -> Vec<f64> {
        if t < self.lengths[i] {
            self.steps[i].row(t).to_vec()
        } else {
            vec![0.0; self.dim]
        }
    }
}

/// Learned features `z` (`m x d`) with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    pub z: Tensor,
    pub labels: Vec<usize>,
}

impl FeatureBatch {
    pub fn new(z: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if z.shape().len() != 2 || z.rows() != labels.len() || labels.is_empty() {
            return Err(Error::shape("features and labels disagree"));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::LabelOutOfRange { label, n_classes });
        }
        if !z.is_finite() {
            return Err(Error::Numeric("non-finite feature".into()));
        }
        Ok(Self { z, labels })
    }
}

fn param_inputs(g: &mut Graph, params: &ModelParams, with_grad: bool) -> Vec<NodeId> {
    params
        .tensors()
        .iter()
        .map(|t| g.input(t.shape(), with_grad))
        .collect()
}

fn build_cnn(
    g: &mut Graph,
    cfg: &EncoderConfig,
    slots: &ParamSlots,
    p: &[NodeId],
    spec: NodeId,
) -> Result<NodeId> {
    let mut x = spec;
    for (layer, [w, b, s]) in cfg.conv_stack.iter().zip(&slots.conv) {
        x = g.conv2d(x, p[*w], p[*b], layer.stride, layer.padding())?;
        x = g.prelu(x, p[*s])?;
        if let Some(window) = layer.pool {
            x = g.max_pool2d(x, window)?;
        }
    }
    g.to_sequence(x)
}

/// Runs one GRU direction over `seq` (`[T, D]`) and returns the final hidden state.
fn build_gru(
    g: &mut Graph,
    hidden: usize,
    gru: &GruSlots,
    p: &[NodeId],
    seq: NodeId,
    reverse: bool,
) -> Result<NodeId> {
    let steps = g.shape(seq)[0];
    if steps == 0 {
        return Err(Error::EmptySequence);
    }
    // input projections for all steps at once
    let mut proj = [seq; 3];
    for k in 0..3 {
        let xw = g.matmul(seq, p[gru.w[k]])?;
        proj[k] = g.add_bias(xw, p[gru.b[k]])?;
    }
    let mut h = g.constant(Tensor::zeros(&[1, hidden]));
    for i in 0..steps {
        let t = if reverse { steps - 1 - i } else { i };
        let xr = g.slice_rows(proj[0], t, 1)?;
        let xu = g.slice_rows(proj[1], t, 1)?;
        let xh = g.slice_rows(proj[2], t, 1)?;

        let hr = g.matmul(h, p[gru.u[0]])?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r)?;
        let hu = g.matmul(h, p[gru.u[1]])?;
        let u = g.add(xu, hu)?;
        let u = g.sigmoid(u)?;
        let rh = g.mul(r, h)?;
        let rhu = g.matmul(rh, p[gru.u[2]])?;
        let cand = g.add(xh, rhu)?;
        let cand = g.tanh(cand)?;

        let keep = g.mul(u, h)?;
        let fresh_gate = g.one_minus(u)?;
        let fresh = g.mul(fresh_gate, cand)?;
        h = g.add(keep, fresh)?;
    }
    Ok(h)
}

fn build_birnn(
    g: &mut Graph,
    cfg: &EncoderConfig,
    slots: &ParamSlots,
    p: &[NodeId],
    seq: NodeId,
) -> Result<NodeId> {
    let fwd = build_gru(g, cfg.rnn_width, &slots.gru_fwd, p, seq, false)?;
    let bwd = build_gru(g, cfg.rnn_width, &slots.gru_bwd, p, seq, true)?;
    g.concat(&[fwd, bwd])
}

fn build_head(
    g: &mut Graph,
    slots: &ParamSlots,
    p: &[NodeId],
    rnn: NodeId,
) -> Result<(NodeId, NodeId)> {
    let [w1, b1, s1] = slots.fc1;
    let z = g.matmul(rnn, p[w1])?;
    let z = g.add_bias(z, p[b1])?;
    let z = g.prelu(z, p[s1])?;
    let [w2, b2] = slots.fc2;
    let logits = g.matmul(z, p[w2])?;
    let logits = g.add_bias(logits, p[b2])?;
    Ok((z, logits))
}

/// Full per-utterance network: spectrogram -> (z, logits), differentiable in every parameter.
#[derive(Clone, Debug)]
pub struct EncoderGraph {
    graph: Graph,
    n_params: usize,
    spec: NodeId,
    rnn: NodeId,
    z: NodeId,
    logits: NodeId,
    frames: usize,
}

impl EncoderGraph {
    pub fn build(cfg: &EncoderConfig, frames: usize, with_grad: bool) -> Result<Self> {
        let (specs, slots) = param_layout(cfg)?;
        cfg.layer_shapes(frames)?;
        let mut g = Graph::new();
        let p: Vec<NodeId> = specs.iter().map(|s| g.input(&s.shape, with_grad)).collect();
        let spec = g.input(&[1, frames, cfg.input_bins], false);
        let seq = build_cnn(&mut g, cfg, &slots, &p, spec)?;
        let rnn = build_birnn(&mut g, cfg, &slots, &p, seq)?;
        let (z, logits) = build_head(&mut g, &slots, &p, rnn)?;
        Ok(Self {
            graph: g,
            n_params: specs.len(),
            spec,
            rnn,
            z,
            logits,
            frames,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub fn spec_node(&self) -> NodeId {
        self.spec
    }

    pub fn z_node(&self) -> NodeId {
        self.z
    }

    pub fn logits_node(&self) -> NodeId {
        self.logits
    }

    /// Graph inputs in slot order: parameters then the spectrogram.
    pub fn inputs(params: &ModelParams, spec: &Spectrogram) -> Result<Vec<Tensor>> {
        let mut inputs = params.tensors().to_vec();
        inputs.push(Tensor::new(
            vec![1, spec.n_frames(), spec.n_bins()],
            spec.values().to_vec(),
        )?);
        Ok(inputs)
    }

    pub fn forward(&mut self, params: &ModelParams, spec: &Spectrogram) -> Result<()> {
        if spec.n_frames() != self.frames {
            return Err(Error::shape(format!(
                "graph built for {} frames, got {}",
                self.frames,
                spec.n_frames()
            )));
        }
        let inputs = Self::inputs(params, spec)?;
        self.graph.forward(&inputs)
    }

    fn value(&self, node: NodeId) -> Result<&Tensor> {
        self.graph.value(node).ok_or(Error::BackwardBeforeForward)
    }

    pub fn z(&self) -> Result<&Tensor> {
        self.value(self.z)
    }

    pub fn logits(&self) -> Result<&Tensor> {
        self.value(self.logits)
    }

    pub fn rnn_output(&self) -> Result<&Tensor> {
        self.value(self.rnn)
    }

    /// Parameter gradients (layout order) for seeds on `z` (`[1, d]`) and logits (`[1, n]`).
    pub fn backward(&self, d_z: &Tensor, d_logits: &Tensor) -> Result<Vec<Tensor>> {
        let grads = self
            .graph
            .backward(&[(self.z, d_z), (self.logits, d_logits)])?;
        grads
            .into_slots()
            .into_iter()
            .take(self.n_params)
            .map(|g| g.ok_or_else(|| Error::config("graph built without gradients")))
            .collect()
    }
}

/// Conv stack over each utterance's valid frames; returns `[T'_i, C*F']` sequences.
pub fn cnn_encode(batch: &SpectrogramBatch, params: &ModelParams) -> Result<SequenceBatch> {
    let cfg = params.config();
    if batch.n_bins() != cfg.input_bins {
        return Err(Error::shape(format!(
            "batch has {} bins, encoder expects {}",
            batch.n_bins(),
            cfg.input_bins
        )));
    }
    let (_, slots) = param_layout(cfg)?;
    let mut out = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let frames = batch.lengths()[i];
        cfg.layer_shapes(frames)?;
        let mut g = Graph::new();
        let p = param_inputs(&mut g, params, false);
        let spec = g.input(&[1, frames, cfg.input_bins], false);
        let seq = build_cnn(&mut g, cfg, &slots, &p, spec)?;
        let mut inputs = params.tensors().to_vec();
        inputs.push(batch.utterance(i));
        out.push(g.eval(&inputs, seq)?);
    }
    SequenceBatch::from_sequences(out)
}

/// Concatenates the forward GRU's state after the last valid step with the
/// backward GRU's state after step 1; `m x 2 * rnn_width`.
pub fn bi_rnn_compress(seqs: &SequenceBatch, params: &ModelParams) -> Result<Tensor> {
    let cfg = params.config();
    let (_, slots) = param_layout(cfg)?;
    let width = cfg.rnn_output_dim();
    let mut data = Vec::with_capacity(seqs.lengths().len() * width);
    for i in 0..seqs.lengths().len() {
        let s = seqs.sequence(i);
        if s.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        let mut g = Graph::new();
        let p = param_inputs(&mut g, params, false);
        let seq = g.input(s.shape(), false);
        let out = build_birnn(&mut g, cfg, &slots, &p, seq)?;
        let mut inputs = params.tensors().to_vec();
        inputs.push(s.clone());
        data.extend_from_slice(g.eval(&inputs, out)?.data());
    }
    Ok(Tensor::matrix(seqs.lengths().len(), width, data))
}

/// `z = PReLU(FC1(bi_rnn_compress(cnn_encode(batch))))`, `m x d`.
pub fn encode(batch: &SpectrogramBatch, params: &ModelParams) -> Result<Tensor> {
    let cfg = params.config();
    let rnn = bi_rnn_compress(&cnn_encode(batch, params)?, params)?;
    let (_, slots) = param_layout(cfg)?;
    let mut g = Graph::new();
    let p = param_inputs(&mut g, params, false);
    let x = g.input(rnn.shape(), false);
    let [w1, b1, s1] = slots.fc1;
    let z = g.matmul(x, p[w1])?;
    let z = g.add_bias(z, p[b1])?;
    let z = g.prelu(z, p[s1])?;
    let mut inputs = params.tensors().to_vec();
    inputs.push(rnn);
    g.eval(&inputs, z)
}

/// `logits[i][j] = W_j . z_i + b_j` with `W` the `d x n` FC2 weight.
pub fn classify(z: &Tensor, params: &ModelParams) -> Result<Tensor> {
    let w = params.get("fc2.weight").expect("layout has fc2");
    let b = params.get("fc2.bias").expect("layout has fc2");
    let (d, n) = (w.shape()[0], w.shape()[1]);
    if z.shape().len() != 2 || z.cols() != d {
        return Err(Error::shape(format!(
            "features {:?} for FC2 of width {d}",
            z.shape()
        )));
    }
    let m = z.rows();
    let mut out = crate::autodiff::matmul(z.data(), w.data(), m, d, n);
    for row in out.chunks_mut(n) {
        for (o, bias) in row.iter_mut().zip(b.data()) {
            *o += bias;
        }
    }
    Ok(Tensor::matrix(m, n, out))
}

/// Features and logits for single utterances, no gradients.
pub fn encode_one(spec: &Spectrogram, params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut graph = EncoderGraph::build(params.config(), spec.n_frames(), false)?;
    graph.forward(params, spec)?;
    Ok((graph.z()?.data().to_vec(), graph.logits()?.data().to_vec()))
}

/// Reusable per-length encoder graphs; the tape depends only on the frame count.
#[derive(Debug, Default)]
pub struct GraphCache {
    graphs: HashMap<usize, EncoderGraph>,
}

impl GraphCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs the forward pass for `spec` and returns the graph holding its values.
    pub fn forward(
        &mut self,
        params: &ModelParams,
        spec: &Spectrogram,
    ) -> Result<&mut EncoderGraph> {
        let frames = spec.n_frames();
        let graph = match self.graphs.entry(frames) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(EncoderGraph::build(params.config(), frames, true)?),
        };
        graph.forward(params, spec)?;
        Ok(graph)
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}
