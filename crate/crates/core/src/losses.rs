//! Class-weighted softmax cross-entropy, class-weighted center loss, the
//! moving-average class centers, and their analytic gradients.
//!
//! Labels are 0-based class indices. With all class weights equal, the
//! weighted losses reduce to the plain batch means.

use serde::{Deserialize, Serialize};

use crate::autodiff::{log_sum_exp, Tensor};
use crate::error::{Error, Result};

/// Per-class loss weights, normalized to mean 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() || raw.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::config("class weights must be positive and finite"));
        }
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        Ok(Self(raw.into_iter().map(|w| w / mean).collect()))
    }

    pub fn uniform(n_classes: usize) -> Self {
        Self(vec![1.0; n_classes])
    }

    /// Weights inversely proportional to per-class sample counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if let Some(j) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass(j));
        }
        Self::new(counts.iter().map(|&c| 1.0 / c as f64).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }

    fn of(&self, label: usize) -> Result<f64> {
        self.0.get(label).copied().ok_or(Error::LabelOutOfRange {
            label,
            n_classes: self.0.len(),
        })
    }

    fn batch_total(&self, labels: &[usize]) -> Result<f64> {
        labels.iter().map(|&y| self.of(y)).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLossConfig {
    /// Weight of the center loss.
    pub lambda: f64,
}

impl JointLossConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config("lambda must be a nonnegative finite number"));
        }
        Ok(Self { lambda })
    }
}

/// Global class centers `c_j`, updated only through [`CenterBank::update`].
#[derive(Clone, Debug, PartialEq)]
pub struct CenterBank {
    centers: Tensor,
    alpha: f64,
    iteration: u64,
}

impl CenterBank {
    /// All centers start at zero.
    pub fn new(n_classes: usize, dim: usize, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(Self {
            centers: Tensor::zeros(&[n_classes, dim]),
            alpha,
            iteration: 0,
        })
    }

    pub fn from_parts(centers: Tensor, alpha: f64, iteration: u64) -> Result<Self> {
        if centers.shape().len() != 2 || !centers.is_finite() {
            return Err(Error::shape("centers must be a finite n x d matrix"));
        }
        let mut bank = Self::new(centers.shape()[0], centers.shape()[1], alpha)?;
        bank.centers = centers;
        bank.iteration = iteration;
        Ok(bank)
    }

    pub fn centers(&self) -> &Tensor {
        &self.centers
    }

    pub fn center(&self, class: usize) -> &[f64] {
        self.centers.row(class)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn n_classes(&self) -> usize {
        self.centers.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.centers.shape()[1]
    }

    /// `c_j <- (1 - alpha) c_j + alpha * batch_center_j` for classes present
    /// in the batch; absent classes keep their previous value.
    pub fn update(&mut self, batch: &BatchCenters) -> Result<()> {
        if batch.centers.len() != self.n_classes() {
            return Err(Error::shape("batch centers class count"));
        }
        let d = self.dim();
        let alpha = self.alpha;
        for (j, bc) in batch.centers.iter().enumerate() {
            let Some(bc) = bc else { continue };
            if bc.len() != d {
                return Err(Error::shape("batch center dimension"));
            }
            let row = &mut self.centers.data_mut()[j * d..(j + 1) * d];
            for (c, b) in row.iter_mut().zip(bc) {
                *c = (1.0 - alpha) * *c + alpha * b;
            }
        }
        self.iteration += 1;
        Ok(())
    }
}

/// Per-class means of one mini-batch; `None` for classes with no samples.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchCenters {
    pub centers: Vec<Option<Vec<f64>>>,
    pub counts: Vec<usize>,
}

impl BatchCenters {
    pub fn is_present(&self, class: usize) -> bool {
        self.counts[class] > 0
    }
}

fn check_batch(rows: &Tensor, labels: &[usize], what: &str) -> Result<()> {
    if rows.shape().len() != 2 || rows.shape()[0] != labels.len() || labels.is_empty() {
        return Err(Error::shape(format!(
            "{what}: {:?} for {} labels",
            rows.shape(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn batch_class_centers(z: &Tensor, labels: &[usize], n_classes: usize) -> Result<BatchCenters> {
    check_batch(z, labels, "batch_class_centers")?;
    let d = z.shape()[1];
    let mut sums = vec![vec![0.0; d]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                n_classes,
            });
        }
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(z.row(i)) {
            *s += v;
        }
    }
    let centers = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect();
    Ok(BatchCenters { centers, counts })
}

/// `L_s = -(1 / sum w_{y_i}) sum_i w_{y_i} log softmax(logits_i)[y_i]`.
pub fn weighted_softmax_ce(
    logits: &Tensor,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<f64> {
    check_batch(logits, labels, "weighted_softmax_ce")?;
    if logits.shape()[1] != weights.n_classes() {
        return Err(Error::shape("logit width differs from class count"));
    }
    let total = weights.batch_total(labels)?;
    let mut acc = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        acc += weights.of(y)? * (log_sum_exp(row) - row[y]);
    }
    Ok(acc / total)
}

/// `L_c = (1 / sum w_{y_i}) sum_i w_{y_i} ||z_i - c_{y_i}||^2`.
pub fn weighted_center_loss(
    z: &Tensor,
    labels: &[usize],
    bank: &CenterBank,
    weights: &ClassWeights,
) -> Result<f64> {
    check_batch(z, labels, "weighted_center_loss")?;
    if z.shape()[1] != bank.dim() {
        return Err(Error::shape(format!(
            "feature dim {} vs center dim {}",
            z.shape()[1],
            bank.dim()
        )));
    }
    if bank.n_classes() != weights.n_classes() {
        return Err(Error::shape(
            "center bank and weights disagree on class count",
        ));
    }
    let total = weights.batch_total(labels)?;
    let mut acc = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let dist: f64 = z
            .row(i)
            .iter()
            .zip(bank.center(y))
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        acc += weights.of(y)? * dist;
    }
    Ok(acc / total)
}

pub fn joint_loss(softmax_loss: f64, center_loss: f64, cfg: &JointLossConfig) -> f64 {
    softmax_loss + cfg.lambda * center_loss
}

#[derive(Clone, Debug)]
pub struct LossGradients {
    pub softmax_loss: f64,
    pub center_loss: f64,
    pub total: f64,
    /// dL/dlogits, `m x n`.
    pub d_logits: Tensor,
    /// Center-loss path of dL/dz, `m x d`; centers are treated as constants.
    pub d_z_center: Tensor,
}

impl LossGradients {
    /// Full dL/dz: the center path plus the cross-entropy path through FC2
    /// (`d_logits * W^T` with `W` the `d x n` FC2 weight).
    pub fn total_d_z(&self, fc2_weight: &Tensor) -> Result<Tensor> {
        let (d, n) = (fc2_weight.shape()[0], fc2_weight.shape()[1]);
        let m = self.d_logits.shape()[0];
        if self.d_logits.shape()[1] != n || self.d_z_center.shape()[1] != d {
            return Err(Error::shape("fc2 weight does not match the loss gradients"));
        }
        let mut out = self.d_z_center.clone();
        let w = fc2_weight.data();
        for i in 0..m {
            let g = self.d_logits.row(i);
            for k in 0..d {
                let s: f64 = (0..n).map(|j| g[j] * w[k * n + j]).sum();
                out.data_mut()[i * d + k] += s;
            }
        }
        Ok(out)
    }
}

/// Losses and analytic gradients of `L = L_s + lambda * L_c`:
/// `dL/dlogits_i = (w_i / W) (softmax_i - onehot(y_i))` and
/// `dL_c/dz_i = (2 lambda w_i / W) (z_i - c_{y_i})`.
pub fn loss_gradients(
    logits: &Tensor,
    z: &Tensor,
    labels: &[usize],
    bank: &CenterBank,
    weights: &ClassWeights,
    cfg: &JointLossConfig,
) -> Result<LossGradients> {
    let softmax_loss = weighted_softmax_ce(logits, labels, weights)?;
    let center_loss = weighted_center_loss(z, labels, bank, weights)?;
    let total = weights.batch_total(labels)?;
    let (m, n) = (logits.shape()[0], logits.shape()[1]);
    let d = z.shape()[1];
    let mut d_logits = Tensor::zeros(&[m, n]);
    let mut d_z_center = Tensor::zeros(&[m, d]);
    for (i, &y) in labels.iter().enumerate() {
        let scale = weights.of(y)? / total;
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        let out = &mut d_logits.data_mut()[i * n..(i + 1) * n];
        for (j, o) in out.iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *o = scale * (p - if j == y { 1.0 } else { 0.0 });
        }
        let zc = &mut d_z_center.data_mut()[i * d..(i + 1) * d];
        for ((o, zi), c) in zc.iter_mut().zip(z.row(i)).zip(bank.center(y)) {
            *o = 2.0 * cfg.lambda * scale * (zi - c);
        }
    }
    Ok(LossGradients {
        softmax_loss,
        center_loss,
        total: joint_loss(softmax_loss, center_loss, cfg),
        d_logits,
        d_z_center,
    })
}
