//! Labelled spectrogram collections and seed derivation.

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

/// Spectrograms with 0-based class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    specs: Vec<Spectrogram>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        specs: Vec<Spectrogram>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if specs.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} spectrograms for {} labels",
                specs.len(),
                labels.len()
            )));
        }
        let n_classes = class_names.len();
        if let Some(&label) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::LabelOutOfRange { label, n_classes });
        }
        if let Some(first) = specs.first() {
            if specs.iter().any(|s| s.n_bins() != first.n_bins()) {
                return Err(Error::shape("spectrograms must share n_bins"));
            }
        }
        Ok(Self {
            specs,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn specs(&self) -> &[Spectrogram] {
        &self.specs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_bins(&self) -> Option<usize> {
        self.specs.first().map(Spectrogram::n_bins)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            specs: indices.iter().map(|&i| self.specs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Independent child seed for stream `stream` of `base` (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
