use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{Complex64, Signal};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

/// Short-time Fourier transform settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
    pub window: WindowKind,
    /// Scale magnitudes by `1/sqrt(window_length)`.
    pub normalized: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_length: 1024,
            hop: 256,
            window: WindowKind::Hann,
            normalized: false,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || !self.window_length.is_power_of_two() {
            return Err(Error::Config(format!(
                "stft window length {} is not a power of two",
                self.window_length
            )));
        }
        if self.hop == 0 || self.hop > self.window_length {
            return Err(Error::Config(format!(
                "stft hop {} must lie in 1..={}",
                self.hop, self.window_length
            )));
        }
        Ok(())
    }

    pub fn window_taps(&self) -> Vec<f64> {
        let n = self.window_length;
        match self.window {
            WindowKind::Hann => (0..n)
                .map(|t| 0.5 - 0.5 * (std::f64::consts::TAU * t as f64 / n as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }

    pub fn bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// Number of full frames in a signal of `len` samples (0 if shorter
    /// than one window).
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window_length {
            0
        } else {
            (len - self.window_length) / self.hop + 1
        }
    }
}

/// Magnitude spectrogram, row-major `[frames × bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }
}

/// Planned STFT with the adjoint needed for spectrogram-loss gradients.
pub struct StftEngine {
    cfg: StftConfig,
    window: Vec<f64>,
    scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftEngine").field("cfg", &self.cfg).finish()
    }
}

impl StftEngine {
    pub fn new(cfg: &StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(StftEngine {
            window: cfg.window_taps(),
            scale: if cfg.normalized {
                1.0 / (cfg.window_length as f64).sqrt()
            } else {
                1.0
            },
            forward: planner.plan_fft_forward(cfg.window_length),
            inverse: planner.plan_fft_inverse(cfg.window_length),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    fn check_len(&self, len: usize) -> Result<usize> {
        let frames = self.cfg.frame_count(len);
        if frames == 0 {
            return Err(Error::Signal(format!(
                "signal of {len} samples is shorter than one stft window ({})",
                self.cfg.window_length
            )));
        }
        Ok(frames)
    }

    /// Complex one-sided spectra, row-major `[frames × bins]`.
    pub fn spectra(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        let frames = self.check_len(x.len())?;
        let n = self.cfg.window_length;
        let bins = self.cfg.bins();
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for f in 0..frames {
            let start = f * self.cfg.hop;
            for (t, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(self.window[t] * x[start + t] * self.scale, 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            out.extend_from_slice(&buf[..bins]);
        }
        Ok(out)
    }

    pub fn magnitudes(&self, x: &[f64]) -> Result<Spectrogram> {
        let spectra = self.spectra(x)?;
        Ok(Spectrogram {
            frames: spectra.len() / self.cfg.bins(),
            bins: self.cfg.bins(),
            data: spectra.iter().map(|c| c.norm()).collect(),
        })
    }

    /// Maps per-entry gradients `dL/dRe + j·dL/dIm` of [`Self::spectra`]
    /// back to `dL/dx` for a signal of `len` samples.
    pub fn adjoint(&self, grad: &[Complex64], len: usize) -> Vec<f64> {
        let n = self.cfg.window_length;
        let bins = self.cfg.bins();
        let frames = grad.len() / bins;
        let mut dx = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for f in 0..frames {
            buf[..bins].copy_from_slice(&grad[f * bins..(f + 1) * bins]);
            buf[bins..].iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            // unnormalized inverse: sum_b G_b exp(+j 2π b t / n)
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = f * self.cfg.hop;
            for t in 0..n {
                dx[start + t] += buf[t].re * self.window[t] * self.scale;
            }
        }
        dx
    }
}

/// Magnitude spectrogram of `x`: frame `f` covers samples
/// `f·hop .. f·hop + window_length`, bins `0..=window_length/2`.
pub fn stft_magnitude(x: &Signal, cfg: &StftConfig) -> Result<Spectrogram> {
    StftEngine::new(cfg)?.magnitudes(x.samples())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dft_bin(frame: &[f64], k: usize) -> Complex64 {
        let n = frame.len() as f64;
        frame
            .iter()
            .enumerate()
            .map(|(t, &v)| Complex64::from_polar(v, -std::f64::consts::TAU * k as f64 * t as f64 / n))
            .sum()
    }

    #[test]
    fn silence_gives_zero_matrix() {
        let s = stft_magnitude(&Signal::zeros(4096, 44100), &StftConfig::default()).unwrap();
        assert_eq!((s.frames, s.bins), (13, 513));
        assert!(s.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dc_bin_equals_window_sum() {
        let cfg = StftConfig::default();
        let x = Signal::new(vec![1.0; 2048], 44100).unwrap();
        let s = stft_magnitude(&x, &cfg).unwrap();
        let wsum: f64 = cfg.window_taps().iter().sum();
        for f in 0..s.frames {
            assert!((s.get(f, 0) - wsum).abs() < 1e-9);
        }
    }

    #[test]
    fn on_bin_sine_stays_in_hann_main_lobe() {
        let cfg = StftConfig::default();
        let x = Signal::from_fn(4096, 44100, |t| {
            (std::f64::consts::TAU * 32.0 * t as f64 / 1024.0).sin()
        })
        .unwrap();
        let s = stft_magnitude(&x, &cfg).unwrap();
        let w = cfg.window_taps();
        for f in 0..s.frames {
            let row = s.frame(f);
            let total: f64 = row.iter().map(|v| v * v).sum();
            let lobe: f64 = row[31..=33].iter().map(|v| v * v).sum();
            assert!(lobe / total > 0.99);
            // brute-force DFT agrees with the fft path
            let frame: Vec<f64> = (0..1024).map(|t| w[t] * x.samples()[f * 256 + t]).collect();
            for k in [30, 31, 32, 33, 100] {
                assert!((dft_bin(&frame, k).norm() - row[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sign_flip_leaves_magnitudes_unchanged() {
        let cfg = StftConfig::default();
        let x = Signal::from_fn(3000, 44100, |t| ((t * 7919) % 113) as f64 / 113.0 - 0.5).unwrap();
        let a = stft_magnitude(&x, &cfg).unwrap();
        let b = stft_magnitude(&x.scaled(-1.0), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_signal_is_an_error() {
        assert!(stft_magnitude(&Signal::zeros(1000, 44100), &StftConfig::default()).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = StftConfig::default();
        cfg.window_length = 1000;
        assert!(cfg.validate().is_err());
        cfg.window_length = 1024;
        cfg.hop = 2048;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn adjoint_matches_transpose() {
        // <spectra(x), G> (real inner product) == <x, adjoint(G)>
        let cfg = StftConfig {
            window_length: 64,
            hop: 16,
            ..StftConfig::default()
        };
        let eng = StftEngine::new(&cfg).unwrap();
        let x: Vec<f64> = (0..200).map(|t| ((t * 31 % 17) as f64 - 8.0) / 8.0).collect();
        let spec = eng.spectra(&x).unwrap();
        let g: Vec<Complex64> = (0..spec.len())
            .map(|i| Complex64::new(((i * 5 % 7) as f64) - 3.0, ((i * 3 % 11) as f64) - 5.0))
            .collect();
        let lhs: f64 = spec.iter().zip(&g).map(|(s, g)| s.re * g.re + s.im * g.im).sum();
        let dx = eng.adjoint(&g, x.len());
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
