use serde::{Deserialize, Serialize};

use super::{Complex64, Signal};
use crate::error::{Error, Result};

/// Causal FIR filter. `nominal_delay` is the latency the filter is meant to
/// introduce (group delay for linear-phase designs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirFilter {
    taps: Vec<f64>,
    nominal_delay: usize,
}

impl FirFilter {
    pub fn new(taps: Vec<f64>, nominal_delay: usize) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Config("fir filter needs at least one tap".into()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("fir taps must be finite".into()));
        }
        Ok(FirFilter {
            taps,
            nominal_delay,
        })
    }

    pub fn identity() -> Self {
        FirFilter {
            taps: vec![1.0],
            nominal_delay: 0,
        }
    }

    /// Pure delay of `d` samples scaled by `gain`.
    pub fn delay(d: usize, gain: f64) -> Self {
        let mut taps = vec![0.0; d + 1];
        taps[d] = gain;
        FirFilter {
            taps,
            nominal_delay: d,
        }
    }

    /// Linear-phase low-pass by the windowed-sinc method (Blackman window),
    /// unit gain at DC. `cutoff_hz` is the half-amplitude point.
    pub fn lowpass(num_taps: usize, cutoff_hz: f64, sample_rate: u32) -> Result<Self> {
        if num_taps == 0 || num_taps % 2 == 0 {
            return Err(Error::Config(format!(
                "low-pass length must be odd, got {num_taps}"
            )));
        }
        let fc = cutoff_hz / sample_rate as f64;
        if !(0.0 < fc && fc < 0.5) {
            return Err(Error::Config(format!(
                "cutoff {cutoff_hz} Hz outside (0, fs/2)"
            )));
        }
        let mid = (num_taps / 2) as f64;
        let mut taps: Vec<f64> = (0..num_taps)
            .map(|i| {
                let t = i as f64 - mid;
                let sinc = if t == 0.0 {
                    2.0 * fc
                } else {
                    (std::f64::consts::TAU * fc * t).sin() / (std::f64::consts::PI * t)
                };
                let phase = std::f64::consts::TAU * i as f64 / (num_taps - 1).max(1) as f64;
                let window = 0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos();
                sinc * if num_taps == 1 { 1.0 } else { window }
            })
            .collect();
        let dc: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= dc);
        FirFilter::new(taps, num_taps / 2)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn nominal_delay(&self) -> usize {
        self.nominal_delay
    }

    /// Complex response at normalized angular frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        self.taps
            .iter()
            .enumerate()
            .map(|(k, &h)| Complex64::from_polar(h, -omega * k as f64))
            .sum()
    }

    /// Filters a raw slice with zero initial state; output has input length.
    pub fn apply_slice(&self, x: &[f64]) -> Vec<f64> {
        convolve_causal(x, &self.taps)
    }

    /// Cascade with another filter (convolution of the tap sets).
    pub fn cascade(&self, other: &FirFilter) -> FirFilter {
        let mut taps = vec![0.0; self.len() + other.len() - 1];
        for (i, a) in self.taps.iter().enumerate() {
            for (j, b) in other.taps.iter().enumerate() {
                taps[i + j] += a * b;
            }
        }
        FirFilter {
            taps,
            nominal_delay: self.nominal_delay + other.nominal_delay,
        }
    }
}

/// Causal convolution truncated to the input length, zero initial state.
pub fn convolve_causal(x: &[f64], h: &[f64]) -> Vec<f64> {
    const BLOCK: usize = 4096;
    let n = x.len();
    let mut y = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        let out = &mut y[start..end];
        for (k, &hk) in h.iter().enumerate() {
            if hk == 0.0 || k >= end {
                continue;
            }
            // out[t - start] += hk * x[t - k] for t in max(start, k)..end
            let t0 = start.max(k);
            let src = &x[t0 - k..end - k];
            let dst = &mut out[t0 - start..];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += hk * s;
            }
        }
        start = end;
    }
    y
}

/// Applies `f` to `x`; the output keeps the input length.
pub fn fir_apply(x: &Signal, f: &FirFilter) -> Signal {
    Signal::from_parts(f.apply_slice(x.samples()), x.sample_rate())
}
