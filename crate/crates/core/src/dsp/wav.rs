use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use super::Signal;
use crate::error::{Error, Result};

/// Sample encodings accepted by [`wav_write`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BitDepth {
    Int16,
    Int24,
    Int32,
    Float32,
}

fn wav_err(path: &Path, reason: impl ToString) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Reads a PCM or IEEE-float WAV file into a signal normalized to `[-1, 1]`.
/// Multi-channel files yield their first channel.
pub fn wav_read(path: impl AsRef<Path>) -> Result<Signal> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(wav_err(path, "zero channels"));
    }
    if channels > 1 {
        log::warn!(
            "{}: {channels} channels, using channel 0",
            path.display()
        );
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .step_by(channels)
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
        (fmt, bits) => {
            return Err(wav_err(
                path,
                format!("unsupported encoding {fmt:?} at {bits} bits"),
            ))
        }
    };
    Signal::new(samples, spec.sample_rate).map_err(|e| wav_err(path, e))
}

/// Writes a mono WAV. Integer encodings round and saturate.
pub fn wav_write(path: impl AsRef<Path>, signal: &Signal, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (bits, format) = match depth {
        BitDepth::Int16 => (16, SampleFormat::Int),
        BitDepth::Int24 => (24, SampleFormat::Int),
        BitDepth::Int32 => (32, SampleFormat::Int),
        BitDepth::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate(),
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    match format {
        SampleFormat::Float => {
            for &s in signal.samples() {
                writer.write_sample(s as f32).map_err(|e| wav_err(path, e))?;
            }
        }
        SampleFormat::Int => {
            let full = (1u64 << (bits - 1)) as f64;
            for &s in signal.samples() {
                let q = (s * full).round().clamp(-full, full - 1.0) as i64;
                match bits {
                    16 => writer.write_sample(q as i16),
                    _ => writer.write_sample(q as i32),
                }
                .map_err(|e| wav_err(path, e))?;
            }
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
