use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{GraphCache, ModelParams};

/// Confusion counts (rows = true class, columns = predicted) with a
/// row-normalized view. Rows without samples are flagged instead of divided.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
    normalized: Vec<f64>,
    empty_rows: Vec<bool>,
}

impl ConfusionMatrix {
    pub fn from_counts(n: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != n * n || n == 0 {
            return Err(Error::shape(format!(
                "{} counts for {n} classes",
                counts.len()
            )));
        }
        let mut normalized = vec![0.0; n * n];
        let mut empty_rows = vec![false; n];
        for t in 0..n {
            let row = &counts[t * n..(t + 1) * n];
            let total: u64 = row.iter().sum();
            if total == 0 {
                empty_rows[t] = true;
                continue;
            }
            for (o, &c) in normalized[t * n..(t + 1) * n].iter_mut().zip(row) {
                *o = c as f64 / total as f64;
            }
        }
        Ok(Self {
            n,
            counts,
            normalized,
            empty_rows,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn normalized_row(&self, truth: usize) -> &[f64] {
        &self.normalized[truth * self.n..(truth + 1) * self.n]
    }

    pub fn is_empty_row(&self, truth: usize) -> bool {
        self.empty_rows[truth]
    }

    /// Per-class recall; `None` for classes without samples.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        (0..self.n)
            .map(|j| (!self.empty_rows[j]).then(|| self.normalized[j * self.n + j]))
            .collect()
    }
}

pub fn confusion_matrix(preds: &[usize], labels: &[usize], n: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut counts = vec![0u64; n * n];
    for (&p, &t) in preds.iter().zip(labels) {
        for c in [p, t] {
            if c >= n {
                return Err(Error::LabelOutOfRange {
                    label: c,
                    n_classes: n,
                });
            }
        }
        counts[t * n + p] += 1;
    }
    ConfusionMatrix::from_counts(n, counts)
}

/// Unweighted accuracy: mean per-class recall.
pub fn ua(cm: &ConfusionMatrix) -> Result<f64> {
    if let Some(j) = cm.empty_rows.iter().position(|&e| e) {
        return Err(Error::EmptyClass(j));
    }
    Ok(ua_from_diagonal(
        &(0..cm.n)
            .map(|j| cm.normalized[j * cm.n + j])
            .collect::<Vec<_>>(),
    ))
}

/// Weighted accuracy: fraction of correct predictions.
pub fn wa(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let correct = preds.iter().zip(labels).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / preds.len() as f64)
}

pub fn ua_from_diagonal(recalls: &[f64]) -> f64 {
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

/// `sum_j prior_j * recall_j`, the accuracy implied by per-class recalls.
pub fn wa_from_diagonal(recalls: &[f64], priors: &[f64]) -> f64 {
    recalls.iter().zip(priors).map(|(r, p)| r * p).sum()
}

/// Elementwise mean of row-normalized matrices. A row is averaged over the
/// matrices where it has samples; counts are summed.
pub fn average_confusion(cms: &[ConfusionMatrix]) -> Result<ConfusionMatrix> {
    let first = cms
        .first()
        .ok_or_else(|| Error::Degenerate("no confusion matrices to average".into()))?;
    let n = first.n;
    if cms.iter().any(|c| c.n != n) {
        return Err(Error::shape("confusion matrices differ in class count"));
    }
    let mut counts = vec![0u64; n * n];
    let mut normalized = vec![0.0; n * n];
    let mut empty_rows = vec![false; n];
    for (t, empty) in empty_rows.iter_mut().enumerate() {
        let present: Vec<&ConfusionMatrix> = cms.iter().filter(|c| !c.empty_rows[t]).collect();
        *empty = present.is_empty();
        for p in 0..n {
            let k = t * n + p;
            counts[k] = cms.iter().map(|c| c.counts[k]).sum();
            if !present.is_empty() {
                normalized[k] =
                    present.iter().map(|c| c.normalized[k]).sum::<f64>() / present.len() as f64;
            }
        }
    }
    Ok(ConfusionMatrix {
        n,
        counts,
        normalized,
        empty_rows,
    })
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (j, &v)| {
            if v > best.1 {
                (j, v)
            } else {
                best
            }
        })
        .0
}

/// Predicted classes and features for every utterance of `data`.
pub fn predict(params: &ModelParams, data: &Dataset) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let mut cache = GraphCache::new();
    predict_cached(params, data, &mut cache)
}

pub(crate) fn predict_cached(
    params: &ModelParams,
    data: &Dataset,
    cache: &mut GraphCache,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let mut preds = Vec::with_capacity(data.len());
    let mut feats = Vec::with_capacity(data.len());
    for spec in data.specs() {
        let g = cache.forward(params, spec)?;
        preds.push(argmax(g.logits()?.data()));
        feats.push(g.z()?.data().to_vec());
    }
    Ok((preds, feats))
}

/// UA, WA and confusion of `params` on `data`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub ua: f64,
    pub wa: f64,
    pub confusion: ConfusionMatrix,
}

pub fn score(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Scores> {
    let confusion = confusion_matrix(preds, labels, n_classes)?;
    Ok(Scores {
        ua: ua(&confusion)?,
        wa: wa(preds, labels)?,
        confusion,
    })
}

/// Spread of features around their class means relative to the spacing of
/// the means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Compactness {
    /// Mean Euclidean distance from each feature to its class mean.
    pub intra: f64,
    /// Mean Euclidean distance over all pairs of class means.
    pub inter: f64,
    pub ratio: f64,
}

pub fn compactness(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
) -> Result<Compactness> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::shape("one feature row per label required"));
    }
    let d = features[0].len();
    let mut means = vec![vec![0.0; d]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (f, &y) in features.iter().zip(labels) {
        if y >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                n_classes,
            });
        }
        counts[y] += 1;
        for (m, v) in means[y].iter_mut().zip(f) {
            *m += v;
        }
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(j));
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c as f64);
    }
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let intra = features
        .iter()
        .zip(labels)
        .map(|(f, &y)| dist(f, &means[y]))
        .sum::<f64>()
        / features.len() as f64;
    let pairs: Vec<f64> = (0..n_classes)
        .flat_map(|a| (a + 1..n_classes).map(move |b| (a, b)))
        .map(|(a, b)| dist(&means[a], &means[b]))
        .collect();
    let inter = pairs.iter().sum::<f64>() / pairs.len().max(1) as f64;
    if inter <= 0.0 {
        return Err(Error::Degenerate("class means coincide".into()));
    }
    Ok(Compactness {
        intra,
        inter,
        ratio: intra / inter,
    })
}
