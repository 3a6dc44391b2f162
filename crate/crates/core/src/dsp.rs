//! Log STFT and log Mel spectrogram frontends.
//!
//! Framing: Hamming windows of `window_len` seconds every `hop_len` seconds,
//! zero-padded to `dft_len`, magnitude of the DFT, then natural log with a
//! floor clamp. The final partial frame is dropped, so a clip of `N` samples
//! yields `floor((N - win) / hop) + 1` frames.

use std::io::{Read, Write};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The only sample rate the frontend accepts; no resampling is done.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("non-finite audio sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DspConfig {
    /// Window length in seconds.
    pub window_len: f64,
    /// Hop length in seconds.
    pub hop_len: f64,
    /// DFT size in samples.
    pub dft_len: usize,
    pub mel_bands: usize,
    /// Longer clips keep only their middle `max_duration` seconds.
    pub max_duration: f64,
    pub log_floor: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            window_len: 0.040,
            hop_len: 0.010,
            dft_len: 1024,
            mel_bands: 128,
            max_duration: 14.0,
            log_floor: 1e-10,
        }
    }
}

impl DspConfig {
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_len * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_len * sample_rate as f64).round() as usize
    }

    pub fn stft_bins(&self) -> usize {
        self.dft_len / 2 + 1
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let win = self.window_samples(sample_rate);
        let hop = self.hop_samples(sample_rate);
        if hop == 0 || self.hop_len.is_nan() || self.hop_len <= 0.0 {
            return Err(Error::config("hop length must be positive"));
        }
        if self.window_len < self.hop_len {
            return Err(Error::config(
                "window length must be at least the hop length",
            ));
        }
        if self.dft_len < win {
            return Err(Error::config(format!(
                "dft_len {} shorter than the {win}-sample window",
                self.dft_len
            )));
        }
        if self.mel_bands == 0 {
            return Err(Error::config("mel_bands must be at least 1"));
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return Err(Error::config("log_floor must be positive"));
        }
        if self.max_duration.is_nan() || self.max_duration <= 0.0 {
            return Err(Error::config("max_duration must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Frontend {
    Stft,
    #[default]
    Mel,
}

impl Frontend {
    pub fn n_bins(self, cfg: &DspConfig) -> usize {
        match self {
            Frontend::Stft => cfg.stft_bins(),
            Frontend::Mel => cfg.mel_bands,
        }
    }

    /// Truncates to the middle `max_duration` seconds, then computes the spectrogram.
    pub fn extract(self, clip: &AudioClip, cfg: &DspConfig) -> Result<Spectrogram> {
        let clip = truncate_middle(clip, cfg.max_duration);
        match self {
            Frontend::Stft => stft_spectrogram(&clip, cfg),
            Frontend::Mel => mel_spectrogram(&clip, cfg),
        }
    }
}

impl std::str::FromStr for Frontend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stft" => Ok(Frontend::Stft),
            "mel" => Ok(Frontend::Mel),
            other => Err(Error::config(format!("unknown frontend {other:?}"))),
        }
    }
}

impl std::fmt::Display for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Frontend::Stft => "stft",
            Frontend::Mel => "mel",
        })
    }
}

/// `n_frames x n_bins` log-magnitude matrix, row-major (one row per frame).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    values: Vec<f64>,
    n_frames: usize,
    n_bins: usize,
}

impl Spectrogram {
    pub fn new(values: Vec<f64>, n_frames: usize, n_bins: usize) -> Result<Self> {
        if n_frames == 0 || n_bins == 0 || values.len() != n_frames * n_bins {
            return Err(Error::shape(format!(
                "spectrogram {n_frames}x{n_bins} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite spectrogram value".into()));
        }
        Ok(Self {
            values,
            n_frames,
            n_bins,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.n_bins + f]
    }

    /// Per-frame argmax bin.
    pub fn peak_bins(&self) -> Vec<usize> {
        (0..self.n_frames)
            .map(|t| {
                let row = self.frame(t);
                (0..row.len())
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                    .unwrap_or(0)
            })
            .collect()
    }

    /// Mean over frames, one value per bin.
    pub fn mean_frame(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_bins];
        for t in 0..self.n_frames {
            for (a, v) in acc.iter_mut().zip(self.frame(t)) {
                *a += v;
            }
        }
        acc.iter().map(|a| a / self.n_frames as f64).collect()
    }
}

/// Keeps the centered `max_duration` seconds of a longer clip.
pub fn truncate_middle(clip: &AudioClip, max_duration: f64) -> AudioClip {
    let max_len = (max_duration * clip.sample_rate as f64).round() as usize;
    let n = clip.samples.len();
    if n <= max_len {
        return clip.clone();
    }
    let start = (n - max_len) / 2;
    AudioClip {
        samples: clip.samples[start..start + max_len].to_vec(),
        sample_rate: clip.sample_rate,
    }
}

/// Hamming window `0.54 - 0.46 cos(2 pi n / (W - 1))`.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
        .collect()
}

pub fn frame_count(n_samples: usize, win: usize, hop: usize) -> Option<usize> {
    (n_samples >= win && hop > 0).then(|| (n_samples - win) / hop + 1)
}

/// Pre-log magnitude spectra, `n_frames x (dft_len/2 + 1)` row-major.
pub fn magnitude_frames(clip: &AudioClip, cfg: &DspConfig) -> Result<(Vec<f64>, usize)> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate(clip.sample_rate));
    }
    cfg.validate(clip.sample_rate)?;
    let win = cfg.window_samples(clip.sample_rate);
    let hop = cfg.hop_samples(clip.sample_rate);
    let n_frames = frame_count(clip.len(), win, hop).ok_or(Error::ClipTooShort {
        samples: clip.len(),
        needed: win,
    })?;
    let bins = cfg.stft_bins();
    let window = hamming(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.dft_len);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.dft_len];
    let mut out = Vec::with_capacity(n_frames * bins);
    for t in 0..n_frames {
        let frame = &clip.samples[t * hop..t * hop + win];
        for (b, (s, w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *b = Complex::new(s * w, 0.0);
        }
        for b in buf[win..].iter_mut() {
            *b = Complex::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        out.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    Ok((out, n_frames))
}

fn log_floor(values: &mut [f64], floor: f64) {
    for v in values {
        *v = v.max(floor).ln();
    }
}

pub fn stft_spectrogram(clip: &AudioClip, cfg: &DspConfig) -> Result<Spectrogram> {
    let (mut mags, n_frames) = magnitude_frames(clip, cfg)?;
    log_floor(&mut mags, cfg.log_floor);
    Spectrogram::new(mags, n_frames, cfg.stft_bins())
}

pub fn mel_spectrogram(clip: &AudioClip, cfg: &DspConfig) -> Result<Spectrogram> {
    let (mags, n_frames) = magnitude_frames(clip, cfg)?;
    let bank = MelFilterbank::new(cfg.mel_bands, cfg.dft_len, clip.sample_rate);
    let mut mel = bank.apply(&mags, n_frames);
    log_floor(&mut mel, cfg.log_floor);
    Spectrogram::new(mel, n_frames, cfg.mel_bands)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// HTK-scale triangular filters from 0 Hz to Nyquist, each row scaled to unit area
/// (`2 / (f_right - f_left)` at the peak).
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    bands: usize,
    bins: usize,
    edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(bands: usize, dft_len: usize, sample_rate: u32) -> Self {
        let bins = dft_len / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges_hz: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / dft_len as f64;
        let mut weights = vec![0.0; bands * bins];
        for b in 0..bands {
            let (lo, mid, hi) = (edges_hz[b], edges_hz[b + 1], edges_hz[b + 2]);
            let norm = 2.0 / (hi - lo);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let rise = (f - lo) / (mid - lo);
                let fall = (hi - f) / (hi - mid);
                let w = rise.min(fall).max(0.0);
                weights[b * bins + k] = w * norm;
            }
        }
        Self {
            weights,
            bands,
            bins,
            edges_hz,
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn center_hz(&self, band: usize) -> f64 {
        self.edges_hz[band + 1]
    }

    pub fn row(&self, band: usize) -> &[f64] {
        &self.weights[band * self.bins..(band + 1) * self.bins]
    }

    /// Applies the bank to `n_frames` magnitude spectra laid out row-major.
    pub fn apply(&self, mags: &[f64], n_frames: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n_frames * self.bands);
        for t in 0..n_frames {
            let frame = &mags[t * self.bins..(t + 1) * self.bins];
            for b in 0..self.bands {
                out.push(self.row(b).iter().zip(frame).map(|(w, m)| w * m).sum());
            }
        }
        out
    }
}

const SPEC_MAGIC: &[u8; 4] = b"SPGM";
const DTYPE_F32_LE: u32 = 1;

/// Binary container: magic `SPGM`, `u32` frames, `u32` bins, `u32` dtype code
/// (1 = little-endian f32), then row-major values. All integers little-endian.
pub fn write_spectrogram<W: Write>(mut w: W, spec: &Spectrogram) -> Result<()> {
    w.write_all(SPEC_MAGIC)?;
    w.write_all(&(spec.n_frames as u32).to_le_bytes())?;
    w.write_all(&(spec.n_bins as u32).to_le_bytes())?;
    w.write_all(&DTYPE_F32_LE.to_le_bytes())?;
    let mut buf = Vec::with_capacity(spec.values.len() * 4);
    for v in &spec.values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_spectrogram<R: Read>(mut r: R) -> Result<Spectrogram> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..4] != SPEC_MAGIC {
        return Err(Error::Container("not a spectrogram file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let (n_frames, n_bins, dtype) = (word(4), word(8), word(12));
    if dtype != DTYPE_F32_LE as usize {
        return Err(Error::Container(format!("unsupported dtype code {dtype}")));
    }
    let mut raw = vec![0u8; n_frames * n_bins * 4];
    r.read_exact(&mut raw)?;
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Spectrogram::new(values, n_frames, n_bins)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sine(freq: f64, seconds: f64, amp: f64) -> AudioClip {
        let n = (seconds * SAMPLE_RATE as f64) as usize;
        let s = (0..n)
            .map(|i| {
                amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin()
            })
            .collect();
        AudioClip::new(s, SAMPLE_RATE).unwrap()
    }

    /// Direct O(N^2) DFT magnitude of one zero-padded frame.
    fn brute_dft_magnitude(frame: &[f64], dft_len: usize) -> Vec<f64> {
        (0..dft_len / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, x) in frame.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / dft_len as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn truncate_keeps_short_and_boundary_clips() {
        let short = sine(200.0, 10.0, 0.5);
        assert_eq!(truncate_middle(&short, 14.0), short);
        let exact = sine(200.0, 14.0, 0.5);
        assert_eq!(truncate_middle(&exact, 14.0), exact);
    }

    #[test]
    fn truncate_takes_centered_slice() {
        let n = 20 * 16_000;
        let clip = AudioClip::new((0..n).map(|i| i as f64).collect(), SAMPLE_RATE).unwrap();
        let out = truncate_middle(&clip, 14.0);
        assert_eq!(out.len(), 224_000);
        // slicing oracle: drop 48000 from the front, keep 224000
        let expected: Vec<f64> = clip
            .samples()
            .iter()
            .skip(48_000)
            .take(224_000)
            .copied()
            .collect();
        assert_eq!(out.samples(), expected.as_slice());
        assert_eq!(out.samples()[0], 48_000.0);
    }

    #[test]
    fn truncate_is_idempotent() {
        let clip = sine(300.0, 15.3, 0.2);
        let once = truncate_middle(&clip, 14.0);
        assert_eq!(truncate_middle(&once, 14.0), once);
    }

    #[test]
    fn one_second_frame_and_bin_counts() {
        let cfg = DspConfig::default();
        let spec = stft_spectrogram(&sine(440.0, 1.0, 0.3), &cfg).unwrap();
        // explicit enumeration of frame starts
        let starts = (0..)
            .map(|t| t * 160)
            .take_while(|s| s + 640 <= 16_000)
            .count();
        assert_eq!(starts, 97);
        assert_eq!(spec.n_frames(), 97);
        assert_eq!(spec.n_bins(), 513);
    }

    #[test]
    fn zero_signal_hits_log_floor() {
        let cfg = DspConfig::default();
        let clip = AudioClip::new(vec![0.0; 8000], SAMPLE_RATE).unwrap();
        let floor = cfg.log_floor.ln();
        for spec in [
            stft_spectrogram(&clip, &cfg).unwrap(),
            mel_spectrogram(&clip, &cfg).unwrap(),
        ] {
            assert!(spec.values().iter().all(|&v| v == floor));
        }
    }

    #[test]
    fn thousand_hz_tone_peaks_at_bin_64() {
        let cfg = DspConfig::default();
        let clip = sine(1000.0, 0.5, 0.5);
        let spec = stft_spectrogram(&clip, &cfg).unwrap();
        assert!(spec.peak_bins().iter().all(|&b| b == 64));

        // oracle on the first frame
        let w = hamming(640);
        let frame: Vec<f64> = clip.samples()[..640]
            .iter()
            .zip(&w)
            .map(|(s, w)| s * w)
            .collect();
        let mags = brute_dft_magnitude(&frame, 1024);
        let argmax = (0..mags.len())
            .max_by(|&a, &b| mags[a].total_cmp(&mags[b]))
            .unwrap();
        assert_eq!(argmax, 64);
        for (k, m) in mags.iter().enumerate() {
            // compare pre-log magnitudes; log space amplifies roundoff in deep sidelobes
            let got = spec.get(0, k).exp();
            let want = m.max(cfg.log_floor);
            assert!(
                (got - want).abs() < 1e-9 * mags[64],
                "bin {k}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn mel_output_has_configured_bands() {
        let cfg = DspConfig::default();
        let spec = mel_spectrogram(&sine(500.0, 0.3, 0.5), &cfg).unwrap();
        assert_eq!(spec.n_bins(), 128);
    }

    #[test]
    fn tone_at_band_center_peaks_in_that_band() {
        let cfg = DspConfig::default();
        let bank = MelFilterbank::new(cfg.mel_bands, cfg.dft_len, SAMPLE_RATE);
        let w = hamming(640);
        for band in [40, 60, 80, 100, 120] {
            let clip = sine(bank.center_hz(band), 0.2, 0.5);
            let spec = mel_spectrogram(&clip, &cfg).unwrap();
            assert!(spec.peak_bins().iter().all(|&b| b == band), "band {band}");

            // filterbank times oracle DFT magnitude of frame 0
            let frame: Vec<f64> = clip.samples()[..640]
                .iter()
                .zip(&w)
                .map(|(s, w)| s * w)
                .collect();
            let mags = brute_dft_magnitude(&frame, 1024);
            let mel: Vec<f64> = (0..bank.bands())
                .map(|b| bank.row(b).iter().zip(&mags).map(|(a, m)| a * m).sum())
                .collect();
            let argmax = (0..mel.len())
                .max_by(|&a, &b| mel[a].total_cmp(&mel[b]))
                .unwrap();
            assert_eq!(argmax, band);
        }
    }

    #[test]
    fn filterbank_rows_have_unit_area() {
        let bank = MelFilterbank::new(40, 1024, SAMPLE_RATE);
        let bin_hz = 16_000.0 / 1024.0;
        // the triangle integrates to 1 in Hz; the bin sum approximates it for wide filters
        let area: f64 = bank.row(39).iter().sum::<f64>() * bin_hz;
        assert!((area - 1.0).abs() < 0.05, "{area}");
    }

    #[test]
    fn rejects_other_sample_rates_and_short_clips() {
        let cfg = DspConfig::default();
        let clip = AudioClip::new(vec![0.0; 8000], 8000).unwrap();
        assert!(matches!(
            stft_spectrogram(&clip, &cfg),
            Err(Error::SampleRate(8000))
        ));
        let short = AudioClip::new(vec![0.0; 639], SAMPLE_RATE).unwrap();
        assert!(matches!(
            mel_spectrogram(&short, &cfg),
            Err(Error::ClipTooShort {
                samples: 639,
                needed: 640
            })
        ));
    }

    #[test]
    fn config_validation() {
        let ok = DspConfig::default();
        assert!(ok.validate(SAMPLE_RATE).is_ok());
        let bad = DspConfig { dft_len: 512, ..ok };
        assert!(bad.validate(SAMPLE_RATE).is_err());
        let bad = DspConfig {
            hop_len: 0.05,
            ..ok
        };
        assert!(bad.validate(SAMPLE_RATE).is_err());
        let bad = DspConfig {
            log_floor: 0.0,
            ..ok
        };
        assert!(bad.validate(SAMPLE_RATE).is_err());
    }

    #[test]
    fn container_round_trip_at_f32_precision() {
        let cfg = DspConfig::default();
        let spec = mel_spectrogram(&sine(700.0, 0.25, 0.4), &cfg).unwrap();
        let mut buf = Vec::new();
        write_spectrogram(&mut buf, &spec).unwrap();
        assert_eq!(&buf[..4], b"SPGM");
        assert_eq!(buf.len(), 16 + spec.values().len() * 4);
        let back = read_spectrogram(buf.as_slice()).unwrap();
        assert_eq!(
            (back.n_frames(), back.n_bins()),
            (spec.n_frames(), spec.n_bins())
        );
        for (a, b) in back.values().iter().zip(spec.values()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(read_spectrogram(&b"NOPE0000000000000000"[..]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn frame_count_formula_holds(n in 640usize..6000) {
            let cfg = DspConfig { mel_bands: 16, ..DspConfig::default() };
            let clip = AudioClip::new(vec![0.1; n], SAMPLE_RATE).unwrap();
            let spec = mel_spectrogram(&clip, &cfg).unwrap();
            prop_assert_eq!(spec.n_frames(), (n - 640) / 160 + 1);
        }

        #[test]
        fn gain_never_decreases_log_values(seed in 0u64..1000, gain in 1.0f64..8.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..2000).map(|_| rng.random_range(-0.5..0.5)).collect();
            let clip = AudioClip::new(samples, SAMPLE_RATE).unwrap();
            let cfg = DspConfig { mel_bands: 32, ..DspConfig::default() };
            for frontend in [Frontend::Stft, Frontend::Mel] {
                let a = frontend.extract(&clip, &cfg).unwrap();
                let b = frontend.extract(&clip.scaled(gain), &cfg).unwrap();
                for (x, y) in a.values().iter().zip(b.values()) {
                    prop_assert!(y >= x);
                }
            }
        }

        #[test]
        fn filterbank_is_linear_pre_log(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let bank = MelFilterbank::new(64, 1024, SAMPLE_RATE);
            let a: Vec<f64> = (0..513 * 2).map(|_| rng.random_range(0.0..2.0)).collect();
            let b: Vec<f64> = (0..513 * 2).map(|_| rng.random_range(0.0..2.0)).collect();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let fa = bank.apply(&a, 2);
            let fb = bank.apply(&b, 2);
            let fs = bank.apply(&sum, 2);
            for ((x, y), s) in fa.iter().zip(&fb).zip(&fs) {
                let rel = (x + y - s).abs() / s.abs().max(1e-300);
                prop_assert!(rel < 1e-10);
            }
        }
    }
}
