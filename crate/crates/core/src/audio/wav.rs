//! Mono WAV I/O (16-bit PCM and 32-bit float).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use log::warn;

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// Reads a WAV file, averaging channels when there is more than one.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => return Err(Error::Format(format!("unsupported WAV encoding {fmt:?}/{bits} bit"))),
    };
    let channels = usize::from(spec.channels.max(1));
    let samples = if channels == 1 {
        interleaved
    } else {
        warn!("{}: downmixing {channels} channels to mono", path.as_ref().display());
        interleaved.chunks(channels).map(|c| c.iter().sum::<f64>() / channels as f64).collect()
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono WAV file. Buffers peaking above full scale are normalized;
/// the applied gain is returned so it can be recorded.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, format: WavFormat) -> Result<f64> {
    let peak = w.samples().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gain = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: if format == WavFormat::Pcm16 { 16 } else { 32 },
        sample_format: if format == WavFormat::Pcm16 { SampleFormat::Int } else { SampleFormat::Float },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &x in w.samples() {
        let y = x * gain;
        match format {
            WavFormat::Pcm16 => writer.write_sample((y * 32767.0).round().clamp(-32768.0, 32767.0) as i16)?,
            WavFormat::Float32 => writer.write_sample(y as f32)?,
        }
    }
    writer.finalize()?;
    Ok(gain)
}
