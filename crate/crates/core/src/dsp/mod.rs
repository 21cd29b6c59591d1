//! Deterministic signal primitives shared by the rest of the crate.

mod fft;
mod fir;
mod stft;
mod tone;
mod wav;

pub use fft::{fft_forward, fft_inverse, Complex64};
pub use fir::{convolve_causal, fir_apply, FirFilter};
pub use stft::{stft_magnitude, Spectrogram, StftConfig, StftEngine, WindowKind};
pub use tone::{third_octave_centers, tone_power, NOMINAL_THIRD_OCTAVE_CENTERS};
pub use wav::{wav_read, wav_write, BitDepth};

use crate::error::{Error, Result};

/// Mono sample sequence in full-scale units at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Signal {
    /// Builds a signal, rejecting a zero rate or non-finite samples.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Signal("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Signal(format!("non-finite sample at index {i}")));
        }
        Ok(Signal {
            samples,
            sample_rate,
        })
    }

    /// Wraps samples that are finite by construction.
    pub(crate) fn from_parts(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(sample_rate > 0);
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Signal {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Signal::from_parts(vec![0.0; len], sample_rate)
    }

    /// Samples `f(n)` for `n` in `0..len`.
    pub fn from_fn(len: usize, sample_rate: u32, f: impl FnMut(usize) -> f64) -> Result<Self> {
        Signal::new((0..len).map(f).collect(), sample_rate)
    }

    /// `amplitude * sin(2π f t + phase)`.
    pub fn sine(len: usize, sample_rate: u32, freq: f64, amplitude: f64, phase: f64) -> Self {
        let fs = sample_rate as f64;
        let samples = (0..len)
            .map(|n| {
                // reduce the phase before calling sin to keep long tones exact
                let cycles = freq * n as f64 / fs;
                let frac = cycles - cycles.floor();
                amplitude * (std::f64::consts::TAU * frac + phase).sin()
            })
            .collect();
        Signal::from_parts(samples, sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
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

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Delays by `d` samples keeping the length (zeros shifted in).
    pub fn delayed(&self, d: usize) -> Signal {
        let n = self.len();
        let mut out = vec![0.0; n];
        if d < n {
            out[d..].copy_from_slice(&self.samples[..n - d]);
        }
        Signal::from_parts(out, self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Signal {
        Signal::from_parts(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
        )
    }

    pub fn slice(&self, start: usize, len: usize) -> Signal {
        Signal::from_parts(self.samples[start..start + len].to_vec(), self.sample_rate)
    }

    pub fn truncated(&self, len: usize) -> Signal {
        self.slice(0, len.min(self.len()))
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.len() as f64).sqrt()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Elementwise clamp into `[-limit, limit]`.
    pub fn clamped(&self, limit: f64) -> Signal {
        Signal::from_parts(
            self.samples.iter().map(|s| s.clamp(-limit, limit)).collect(),
            self.sample_rate,
        )
    }

    /// Rounds every sample to the nearest 32-bit float.
    pub fn quantized_f32(&self) -> Signal {
        Signal::from_parts(
            self.samples.iter().map(|&s| s as f32 as f64).collect(),
            self.sample_rate,
        )
    }
}
