use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::derive_seed;
use crate::dsp::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Class names in the order used by the published tables.
pub const EMOTIONS: [&str; 4] = ["neutral", "angry", "happy", "sad"];
/// Class proportions of the four-class IEMOCAP subset.
pub const EMOTION_PROPORTIONS: [f64; 4] = [0.309, 0.199, 0.296, 0.196];

const PEAK: f64 = 0.5;
const MIN_DURATION: f64 = 0.3;
const MAX_DURATION: f64 = 14.0;

/// Tone-complex recipe for one synthetic class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecipe {
    /// Fundamental frequency range in Hz; each clip draws its own.
    pub f0_range: (f64, f64),
    pub harmonics: usize,
    /// Amplitude of harmonic `h` (1-based) is `decay^(h-1)`.
    pub harmonic_decay: f64,
    /// Relative pitch change over the clip, e.g. `-0.1` for a 10% fall.
    pub glide: f64,
    /// Amplitude-modulation rate in Hz.
    pub am_rate: f64,
    pub am_depth: f64,
    /// Standard deviation of additive white noise, relative to the tone peak.
    pub noise_level: f64,
    /// Clip duration range in seconds.
    pub duration: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub class_names: Vec<String>,
    pub recipes: Vec<ClassRecipe>,
    pub proportions: Vec<f64>,
    pub total: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Four emotion-like classes with disjoint pitch ranges and the published
    /// class imbalance.
    pub fn emotions(total: usize, seed: u64, noise_level: f64, duration: (f64, f64)) -> Self {
        let recipe = |f0_range, harmonics, harmonic_decay, glide, am_rate, am_depth| ClassRecipe {
            f0_range,
            harmonics,
            harmonic_decay,
            glide,
            am_rate,
            am_depth,
            noise_level,
            duration,
        };
        Self {
            class_names: EMOTIONS.iter().map(|s| s.to_string()).collect(),
            recipes: vec![
                recipe((130.0, 170.0), 6, 0.6, 0.0, 3.0, 0.2),
                recipe((250.0, 320.0), 8, 0.8, 0.15, 7.0, 0.6),
                recipe((380.0, 480.0), 5, 0.7, 0.1, 5.0, 0.4),
                recipe((85.0, 115.0), 4, 0.5, -0.15, 2.0, 0.3),
            ],
            proportions: EMOTION_PROPORTIONS.to_vec(),
            total,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.class_names.len();
        if n < 2 || self.recipes.len() != n || self.proportions.len() != n {
            return Err(Error::config(
                "need at least two classes with one recipe and proportion each",
            ));
        }
        let sum: f64 = self.proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.proportions.iter().any(|p| p.is_nan() || *p < 0.0) {
            return Err(Error::config(format!(
                "class proportions sum to {sum}, not 1"
            )));
        }
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        for (name, r) in self.class_names.iter().zip(&self.recipes) {
            let (lo, hi) = r.duration;
            if !(lo > MIN_DURATION && lo <= hi && hi <= MAX_DURATION) {
                return Err(Error::config(format!(
                    "{name}: durations must lie in ({MIN_DURATION}, {MAX_DURATION}] s"
                )));
            }
            let (f_lo, f_hi) = r.f0_range;
            let top = f_hi * r.harmonics as f64 * (1.0 + r.glide.max(0.0));
            if !(f_lo > 0.0 && f_lo <= f_hi && top < nyquist && r.harmonics >= 1) {
                return Err(Error::config(format!(
                    "{name}: harmonics must stay below {nyquist} Hz"
                )));
            }
            if !(r.noise_level >= 0.0 && (0.0..=1.0).contains(&r.am_depth) && r.am_rate >= 0.0) {
                return Err(Error::config(format!(
                    "{name}: invalid noise or modulation"
                )));
            }
            if r.glide.is_nan() || r.glide <= -1.0 {
                return Err(Error::config(format!("{name}: glide must exceed -1")));
            }
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` items; remainder ties go to
/// the lower class index.
pub fn apportion(total: usize, proportions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(total.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

/// Generated clips with 0-based labels, in a seeded shuffled order.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub clips: Vec<AudioClip>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

pub fn synthesize_clip(recipe: &ClassRecipe, seed: u64) -> Result<AudioClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = rng.random_range(recipe.duration.0..=recipe.duration.1);
    let f0 = rng.random_range(recipe.f0_range.0..=recipe.f0_range.1);
    let am_phase = rng.random_range(0.0..TAU);
    let phases: Vec<f64> = (0..recipe.harmonics)
        .map(|_| rng.random_range(0.0..TAU))
        .collect();
    let n = (duration * SAMPLE_RATE as f64).round() as usize;
    let sr = SAMPLE_RATE as f64;
    let norm: f64 = (0..recipe.harmonics)
        .map(|h| recipe.harmonic_decay.powi(h as i32))
        .sum();
    let noise =
        Normal::new(0.0, recipe.noise_level * PEAK).map_err(|e| Error::config(e.to_string()))?;
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / sr;
        // instantaneous f0 glides linearly; the phase is its integral
        let phase = TAU * f0 * (t + recipe.glide * t * t / (2.0 * duration));
        let tone: f64 = phases
            .iter()
            .enumerate()
            .map(|(h, ph)| {
                recipe.harmonic_decay.powi(h as i32) * ((h + 1) as f64 * phase + ph).sin()
            })
            .sum::<f64>()
            / norm;
        let envelope =
            1.0 - recipe.am_depth * 0.5 * (1.0 + (TAU * recipe.am_rate * t + am_phase).sin());
        let x = PEAK * envelope * tone + noise.sample(&mut rng);
        samples.push(x.clamp(-1.0, 32767.0 / 32768.0));
    }
    AudioClip::new(samples, SAMPLE_RATE)
}

/// Deterministic corpus: a pure function of `spec`.
pub fn generate_synthetic_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let counts = apportion(spec.total, &spec.proportions);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        spec.seed,
        u64::MAX,
    )));
    let clips = labels
        .iter()
        .enumerate()
        .map(|(i, &c)| synthesize_clip(&spec.recipes[c], derive_seed(spec.seed, i as u64)))
        .collect::<Result<_>>()?;
    Ok(SynthCorpus {
        clips,
        labels,
        class_names: spec.class_names.clone(),
    })
}
