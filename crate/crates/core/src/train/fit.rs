use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dataset::{derive_seed, Dataset};
use crate::error::{Error, Result};
use crate::eval::{predict_cached, score};
use crate::losses::{batch_class_centers, loss_gradients, CenterBank, ClassWeights};
use crate::model::{EncoderConfig, EncoderGraph, GraphCache, ModelParams, SpectrogramBatch};
use crate::train::{adam_step, clip_global_norm, AdamState, TrainConfig};

/// Indices of one mini-batch into its dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn labels(&self, data: &Dataset) -> Vec<usize> {
        self.indices.iter().map(|&i| data.labels()[i]).collect()
    }

    /// Zero-padded spectrograms with their valid lengths.
    pub fn padded(&self, data: &Dataset) -> Result<SpectrogramBatch> {
        SpectrogramBatch::from_spectrograms(self.indices.iter().map(|&i| &data.specs()[i]))
    }
}

/// Seeded shuffle of `0..n` cut into batches of `batch_size` (the last may be short).
pub fn make_batches(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(batch_size)
        .map(|c| Batch {
            indices: c.to_vec(),
        })
        .collect())
}

/// Shuffle seed of a 1-based epoch.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    derive_seed(seed, epoch as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub epoch: usize,
    pub iteration: u64,
    pub softmax_loss: f64,
    pub center_loss: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-mean losses over the epoch.
    pub softmax_loss: f64,
    pub center_loss: f64,
    pub dev_ua: f64,
    pub dev_wa: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub iterations: Vec<IterationRecord>,
    /// Epoch whose parameters were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

impl History {
    /// One JSON object per epoch.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.epochs {
            let line = serde_json::to_string(rec).map_err(|e| Error::Container(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Graphs reused across batches; a batch may hold several utterances of the
/// same length, so each length keeps a small pool.
#[derive(Default)]
struct GraphPool {
    graphs: HashMap<usize, Vec<EncoderGraph>>,
}

impl GraphPool {
    fn take(&mut self, cfg: &EncoderConfig, frames: usize) -> Result<EncoderGraph> {
        match self.graphs.get_mut(&frames).and_then(Vec::pop) {
            Some(g) => Ok(g),
            None => EncoderGraph::build(cfg, frames, true),
        }
    }

    fn give(&mut self, graph: EncoderGraph) {
        self.graphs.entry(graph.frames()).or_default().push(graph);
    }
}

/// Mutable training state: parameters, centers, optimizer moments.
pub struct Trainer {
    pub params: ModelParams,
    pub centers: CenterBank,
    pub adam: AdamState,
    pub weights: ClassWeights,
    pub cfg: TrainConfig,
    pool: GraphPool,
}

impl Trainer {
    pub fn new(params: ModelParams, weights: ClassWeights, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let enc = params.config();
        if weights.n_classes() != enc.n_classes {
            return Err(Error::config(
                "class weights do not match the encoder's class count",
            ));
        }
        let centers = CenterBank::new(enc.n_classes, enc.feature_dim, cfg.alpha)?;
        Ok(Self {
            adam: AdamState::new(params.tensors()),
            params,
            centers,
            weights,
            cfg,
            pool: GraphPool::default(),
        })
    }

    /// Forward, joint loss, backward, Adam update, then the center update
    /// from the pre-update features.
    pub fn step(&mut self, data: &Dataset, indices: &[usize]) -> Result<IterationRecord> {
        if indices.is_empty() {
            return Err(Error::config("empty batch"));
        }
        let enc = self.params.config().clone();
        let (d, n) = (enc.feature_dim, enc.n_classes);
        let mut graphs = Vec::with_capacity(indices.len());
        let mut z = Vec::with_capacity(indices.len() * d);
        let mut logits = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let spec = &data.specs()[i];
            let mut g = self.pool.take(&enc, spec.n_frames())?;
            g.forward(&self.params, spec)?;
            z.extend_from_slice(g.z()?.data());
            logits.extend_from_slice(g.logits()?.data());
            labels.push(data.labels()[i]);
            graphs.push(g);
        }
        let m = indices.len();
        let z = Tensor::matrix(m, d, z);
        let logits = Tensor::matrix(m, n, logits);
        let lg = loss_gradients(
            &logits,
            &z,
            &labels,
            &self.centers,
            &self.weights,
            &self.cfg.joint(),
        )?;
        if !lg.total.is_finite() {
            return Err(Error::Numeric(format!("loss is {}", lg.total)));
        }

        let mut grads: Vec<Tensor> = self
            .params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        for (i, g) in graphs.into_iter().enumerate() {
            let dz = Tensor::matrix(1, d, lg.d_z_center.row(i).to_vec());
            let dl = Tensor::matrix(1, n, lg.d_logits.row(i).to_vec());
            for (acc, gi) in grads.iter_mut().zip(g.backward(&dz, &dl)?) {
                acc.add_assign(&gi);
            }
            self.pool.give(g);
        }
        if !grads.iter().all(Tensor::is_finite) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        if let Some(max) = self.cfg.clip_norm {
            clip_global_norm(&mut grads, max);
        }
        adam_step(self.params.tensors_mut(), &grads, &mut self.adam, &self.cfg)?;
        if !self.params.is_finite() {
            return Err(Error::Numeric("non-finite parameter after update".into()));
        }
        self.centers.update(&batch_class_centers(&z, &labels, n)?)?;
        Ok(IterationRecord {
            epoch: 0,
            iteration: self.adam.step,
            softmax_loss: lg.softmax_loss,
            center_loss: lg.center_loss,
            loss: lg.total,
        })
    }
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    pub params: ModelParams,
    pub centers: CenterBank,
    pub history: History,
}

pub fn fit(
    train: &Dataset,
    dev: &Dataset,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<FitOutput> {
    fit_with(train, dev, encoder, cfg, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with(
    train: &Dataset,
    dev: &Dataset,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutput> {
    cfg.validate()?;
    if train.n_classes() != encoder.n_classes {
        return Err(Error::config(format!(
            "dataset has {} classes, encoder {}",
            train.n_classes(),
            encoder.n_classes
        )));
    }
    let params = ModelParams::init(encoder, cfg.seed)?;
    let weights = if cfg.class_weighting {
        ClassWeights::from_counts(&train.class_counts())?
    } else {
        ClassWeights::uniform(encoder.n_classes)
    };
    let mut trainer = Trainer::new(params, weights, cfg.clone())?;
    let mut history = History::default();
    let mut best: Option<(f64, ModelParams, CenterBank)> = None;
    if cfg.max_epochs > 0 && (train.is_empty() || dev.is_empty()) {
        return Err(Error::config("training needs non-empty train and dev sets"));
    }
    let mut dev_cache = GraphCache::new();

    for epoch in 1..=cfg.max_epochs {
        let batches = make_batches(train.len(), cfg.batch_size, epoch_seed(cfg.seed, epoch))?;
        let (mut ls, mut lc) = (0.0, 0.0);
        for batch in &batches {
            let mut rec = trainer.step(train, &batch.indices)?;
            rec.epoch = epoch;
            ls += rec.softmax_loss;
            lc += rec.center_loss;
            history.iterations.push(rec);
        }
        let (preds, _) = predict_cached(&trainer.params, dev, &mut dev_cache)?;
        let s = score(&preds, dev.labels(), dev.n_classes())?;
        let record = EpochRecord {
            epoch,
            softmax_loss: ls / batches.len() as f64,
            center_loss: lc / batches.len() as f64,
            dev_ua: s.ua,
            dev_wa: s.wa,
        };
        on_epoch(&record);
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(ua, _, _)| s.ua > *ua) {
            best = Some((s.ua, trainer.params.clone(), trainer.centers.clone()));
            history.best_epoch = Some(epoch);
        }
    }

    let (params, centers) = match best {
        Some((_, p, c)) => (p, c),
        None => (trainer.params, trainer.centers),
    };
    Ok(FitOutput {
        params,
        centers,
        history,
    })
}
