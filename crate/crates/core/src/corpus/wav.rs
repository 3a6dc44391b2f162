use std::path::Path;

use crate::dsp::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

const SCALE: f64 = 32768.0;

/// Reads 16-bit PCM mono 16 kHz audio, scaled by 1/32768.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let fmt_err = |reason: String| Error::WavFormat {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| fmt_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(fmt_err(format!(
            "expected 16-bit integer PCM, found {} bits {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.channels != 1 {
        return Err(fmt_err(format!(
            "expected mono, found {} channels",
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(fmt_err(format!(
            "expected {SAMPLE_RATE} Hz, found {} Hz",
            spec.sample_rate
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| fmt_err(e.to_string()))?;
    AudioClip::new(samples, SAMPLE_RATE)
}

/// Writes 16-bit PCM mono; samples are rounded and clamped to the i16 range.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let fmt_err = |e: hound::Error| Error::WavFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(fmt_err)?;
    for &s in clip.samples() {
        let q = (s * SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(q).map_err(fmt_err)?;
    }
    writer.finalize().map_err(fmt_err)
}
