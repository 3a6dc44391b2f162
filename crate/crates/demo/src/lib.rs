//! WebAssembly bindings for the browser page in `www/`.
//!
//! Every exported function is plain Rust as well, so the logic is tested natively.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wasm_bindgen::prelude::*;

use ser_core::autodiff::Tensor;
use ser_core::corpus::EMOTION_PROPORTIONS;
use ser_core::dsp::{AudioClip, DspConfig, Frontend, SAMPLE_RATE};
use ser_core::eval::{compactness, ua_from_diagonal, wa_from_diagonal};
use ser_core::losses::{
    batch_class_centers, loss_gradients, CenterBank, ClassWeights, JointLossConfig,
};

/// Error message surfaced to JavaScript as an `Error`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoError(pub String);

impl From<DemoError> for JsValue {
    fn from(e: DemoError) -> Self {
        JsError::new(&e.0).into()
    }
}

fn js_err(e: impl std::fmt::Display) -> DemoError {
    DemoError(e.to_string())
}

/// Log spectrogram of a pure tone.
#[wasm_bindgen]
pub struct ToneSpectrogram {
    frames: usize,
    bins: usize,
    values: Vec<f64>,
    peak: usize,
}

#[wasm_bindgen]
impl ToneSpectrogram {
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[wasm_bindgen(getter)]
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Row-major `frames x bins`.
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// Most frequent per-frame peak bin.
    #[wasm_bindgen(getter)]
    pub fn peak(&self) -> usize {
        self.peak
    }
}

#[wasm_bindgen]
pub fn tone_spectrogram(
    freq_hz: f64,
    duration: f64,
    mel: bool,
) -> Result<ToneSpectrogram, DemoError> {
    if !(freq_hz > 0.0 && freq_hz < SAMPLE_RATE as f64 / 2.0) {
        return Err(js_err("frequency must lie between 0 and 8000 Hz"));
    }
    let n = (duration * SAMPLE_RATE as f64).round() as usize;
    let samples = (0..n)
        .map(|k| 0.5 * (std::f64::consts::TAU * freq_hz * k as f64 / SAMPLE_RATE as f64).sin())
        .collect();
    let clip = AudioClip::new(samples, SAMPLE_RATE).map_err(js_err)?;
    let frontend = if mel { Frontend::Mel } else { Frontend::Stft };
    let spec = frontend
        .extract(&clip, &DspConfig::default())
        .map_err(js_err)?;
    let mut votes = vec![0usize; spec.n_bins()];
    spec.peak_bins().into_iter().for_each(|b| votes[b] += 1);
    let peak = (0..votes.len()).max_by_key(|&b| votes[b]).unwrap_or(0);
    Ok(ToneSpectrogram {
        frames: spec.n_frames(),
        bins: spec.n_bins(),
        values: spec.values().to_vec(),
        peak,
    })
}

/// UA and WA (both in percent) from a comma-separated per-class recall diagonal,
/// weighting WA by the four-class emotion priors.
#[wasm_bindgen]
pub fn accuracy_from_diagonal(diagonal: &str) -> Result<Vec<f64>, DemoError> {
    let recalls = diagonal
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(js_err)?;
    if recalls.len() != EMOTION_PROPORTIONS.len() {
        return Err(js_err("expected four recalls"));
    }
    if recalls.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(js_err("recalls must lie in [0, 1]"));
    }
    Ok(vec![
        100.0 * ua_from_diagonal(&recalls),
        100.0 * wa_from_diagonal(&recalls, &EMOTION_PROPORTIONS),
    ])
}

const TOY_CLASSES: usize = 3;
const TOY_PER_CLASS: usize = 40;

/// Free 2-D features of three overlapping clusters, trained by gradient
/// descent on the joint loss with a fixed linear classifier.
#[wasm_bindgen]
pub struct CenterLossToy {
    z: Tensor,
    labels: Vec<usize>,
    classifier: Tensor,
    bank: CenterBank,
    joint: JointLossConfig,
    learning_rate: f64,
    steps: usize,
}

#[wasm_bindgen]
impl CenterLossToy {
    #[wasm_bindgen(constructor)]
    pub fn new(lambda: f64, alpha: f64, seed: u64) -> Result<CenterLossToy, DemoError> {
        let joint = JointLossConfig::new(lambda).map_err(js_err)?;
        let bank = CenterBank::new(TOY_CLASSES, 2, alpha).map_err(js_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let mut data = Vec::with_capacity(TOY_CLASSES * TOY_PER_CLASS * 2);
        let mut labels = Vec::with_capacity(TOY_CLASSES * TOY_PER_CLASS);
        for j in 0..TOY_CLASSES {
            let angle = std::f64::consts::TAU * j as f64 / TOY_CLASSES as f64;
            for _ in 0..TOY_PER_CLASS {
                data.push(angle.cos() + noise.sample(&mut rng));
                data.push(angle.sin() + noise.sample(&mut rng));
                labels.push(j);
            }
        }
        let classifier = Tensor::matrix(
            2,
            TOY_CLASSES,
            (0..2 * TOY_CLASSES)
                .map(|k| {
                    let angle =
                        std::f64::consts::TAU * (k % TOY_CLASSES) as f64 / TOY_CLASSES as f64;
                    if k < TOY_CLASSES {
                        angle.cos()
                    } else {
                        angle.sin()
                    }
                })
                .collect(),
        );
        Ok(CenterLossToy {
            z: Tensor::matrix(labels.len(), 2, data),
            labels,
            classifier,
            bank,
            joint,
            learning_rate: 5.0,
            steps: 0,
        })
    }

    /// Runs `n` full-batch steps and returns the last joint loss.
    pub fn step(&mut self, n: usize) -> Result<f64, DemoError> {
        let uniform = ClassWeights::uniform(TOY_CLASSES);
        let mut loss = f64::NAN;
        for _ in 0..n {
            let logits = Tensor::matrix(
                self.labels.len(),
                TOY_CLASSES,
                (0..self.labels.len())
                    .flat_map(|i| {
                        let row = self.z.row(i);
                        let w = self.classifier.data();
                        (0..TOY_CLASSES).map(move |j| row[0] * w[j] + row[1] * w[TOY_CLASSES + j])
                    })
                    .collect(),
            );
            let g = loss_gradients(
                &logits,
                &self.z,
                &self.labels,
                &self.bank,
                &uniform,
                &self.joint,
            )
            .map_err(js_err)?;
            let dz = g.total_d_z(&self.classifier).map_err(js_err)?;
            let batch = batch_class_centers(&self.z, &self.labels, TOY_CLASSES).map_err(js_err)?;
            for (v, d) in self.z.data_mut().iter_mut().zip(dz.data()) {
                *v -= self.learning_rate * d;
            }
            self.bank.update(&batch).map_err(js_err)?;
            loss = g.total;
            self.steps += 1;
        }
        Ok(loss)
    }

    #[wasm_bindgen(getter)]
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Interleaved `x, y` per point.
    pub fn points(&self) -> Vec<f64> {
        self.z.data().to_vec()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.labels.iter().map(|&y| y as u32).collect()
    }

    /// Interleaved `x, y` per class center.
    pub fn centers(&self) -> Vec<f64> {
        self.bank.centers().data().to_vec()
    }

    /// Mean distance to the class mean over mean distance between class means.
    pub fn compactness(&self) -> Result<f64, DemoError> {
        let rows: Vec<Vec<f64>> = (0..self.labels.len())
            .map(|i| self.z.row(i).to_vec())
            .collect();
        Ok(compactness(&rows, &self.labels, TOY_CLASSES)
            .map_err(js_err)?
            .ratio)
    }
}
