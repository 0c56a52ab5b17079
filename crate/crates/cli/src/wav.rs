//! Stereo 16-bit PCM WAV I/O.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

const FULL_SCALE: f64 = 32768.0;

/// Reads a 2-channel 16-bit PCM file at `rate` Hz into two channels scaled
/// to [-1, 1).
pub fn read_stereo(path: &Path, rate: u32) -> Result<(Vec<f64>, Vec<f64>)> {
    let reader = WavReader::open(path)
        .with_context(|| format!("cannot open WAV file {}", path.display()))?;
    let spec = reader.spec();
    if spec.channels != 2 {
        bail!(
            "{}: expected 2 channels, found {} (input must be 2-channel 16-bit PCM at {rate} Hz)",
            path.display(),
            spec.channels
        );
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        bail!(
            "{}: expected 16-bit integer PCM, found {}-bit {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        );
    }
    if spec.sample_rate != rate {
        bail!(
            "{}: expected sample rate {rate} Hz, found {} Hz (no resampling is performed)",
            path.display(),
            spec.sample_rate
        );
    }
    let samples: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("cannot decode samples of {}", path.display()))?;
    let (mut ch1, mut ch2) = (
        Vec::with_capacity(samples.len() / 2),
        Vec::with_capacity(samples.len() / 2),
    );
    for frame in samples.chunks_exact(2) {
        ch1.push(frame[0] as f64 / FULL_SCALE);
        ch2.push(frame[1] as f64 / FULL_SCALE);
    }
    Ok((ch1, ch2))
}

/// Writes two equal-length channels, scaling both jointly so the larger
/// absolute peak lands at `peak` of full scale.
pub fn write_stereo(path: &Path, ch1: &[f64], ch2: &[f64], rate: u32, peak: f64) -> Result<()> {
    if ch1.len() != ch2.len() {
        bail!("channel lengths differ: {} vs {}", ch1.len(), ch2.len());
    }
    let max = ch1.iter().chain(ch2).fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if max > 0.0 { peak / max } else { 0.0 };
    let spec = WavSpec {
        channels: 2,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let quantize = |v: f64| {
        (v * gain * FULL_SCALE)
            .round()
            .clamp(-FULL_SCALE, FULL_SCALE - 1.0) as i16
    };
    for (a, b) in ch1.iter().zip(ch2) {
        writer.write_sample(quantize(*a))?;
        writer.write_sample(quantize(*b))?;
    }
    writer
        .finalize()
        .with_context(|| format!("cannot finish {}", path.display()))?;
    Ok(())
}
