//! Envelope-domain stand-in for a DSBAM parametric array loudspeaker.
//!
//! The audible output follows Berktay's far-field law: pressure is
//! proportional to the second time derivative of the squared envelope. No
//! ultrasonic carrier is synthesized; the transducer's band-pass around the
//! carrier appears as a baseband FIR on the envelope.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{wav_read, FirFilter, Signal};
use crate::error::{Error, Result};

/// Length of the half-band filters used for 2x oversampling.
const RESAMPLER_TAPS: usize = 49;

/// Second-derivative operator: a linear-phase least-squares first-derivative
/// FIR applied twice.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentiatorFilter {
    first: FirFilter,
}

impl DifferentiatorFilter {
    /// Designs an antisymmetric differentiator of odd length `num_taps`,
    /// least-squares fitted to `jω` on `[0, 0.85π]`.
    pub fn design(num_taps: usize) -> Result<Self> {
        if num_taps < 3 || num_taps % 2 == 0 {
            return Err(Error::Config(format!(
                "differentiator length must be odd and >= 3, got {num_taps}"
            )));
        }
        let half = num_taps / 2;
        let grid = 40 * num_taps;
        let band = 0.85 * std::f64::consts::PI;
        // centered response is -2j Σ b_k sin(kω); match jω
        let a = DMatrix::from_fn(grid, half, |g, k| {
            let w = band * (g as f64 + 0.5) / grid as f64;
            ((k + 1) as f64 * w).sin()
        });
        let t = DVector::from_fn(grid, |g, _| -0.5 * band * (g as f64 + 0.5) / grid as f64);
        let normal = a.transpose() * &a;
        let rhs = a.transpose() * t;
        let b = normal
            .cholesky()
            .ok_or_else(|| Error::Config("differentiator design is singular".into()))?
            .solve(&rhs);
        let mut taps = vec![0.0; num_taps];
        for k in 0..half {
            taps[half + k + 1] = b[k];
            taps[half - k - 1] = -b[k];
        }
        Ok(DifferentiatorFilter {
            first: FirFilter::new(taps, half)?,
        })
    }

    pub fn first_derivative(&self) -> &FirFilter {
        &self.first
    }

    pub fn order(&self) -> usize {
        2
    }

    /// Latency of the twice-applied filter.
    pub fn group_delay(&self) -> usize {
        2 * self.first.nominal_delay()
    }

    /// Second derivative with zero initial state.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let once = self.first.apply_slice(x);
        self.first.apply_slice(&once)
    }
}

/// DSBAM envelope `1 + m·u`. Overmodulation passes through unclipped.
pub fn dsbam_envelope(u: &Signal, m: f64) -> Signal {
    Signal::from_parts(
        u.samples().iter().map(|&x| 1.0 + m * x).collect(),
        u.sample_rate(),
    )
}

/// `gain · D²(e²)`, delayed by the differentiator's group delay.
pub fn berktay_demodulate(e: &Signal, diff: &DifferentiatorFilter, gain: f64) -> Signal {
    let sq: Vec<f64> = e.samples().iter().map(|v| v * v).collect();
    let mut out = diff.apply(&sq);
    out.iter_mut().for_each(|v| *v *= gain);
    Signal::from_parts(out, e.sample_rate())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantKind {
    /// DSBAM + Berktay self-demodulation chain.
    Berktay,
    /// Pass-through; a test fixture.
    Identity,
    /// Pure delay by `delay` samples scaled by `output_gain`.
    Delay,
    /// Memoryless `u + c·u²` with `c = quadratic_coeff`.
    Quadratic,
}

/// Serializable plant description; [`PlantSpec::build`] turns it into a
/// runnable [`Plant`] at a given sample rate.
///
/// Cutoffs of 0 disable the corresponding filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSpec {
    pub kind: PlantKind,
    pub modulation_index: f64,
    pub envelope_cutoff_hz: f64,
    pub envelope_taps: usize,
    pub output_cutoff_hz: f64,
    pub output_taps: usize,
    pub differentiator_taps: usize,
    pub delay: usize,
    pub noise_rms: f64,
    pub output_gain: f64,
    pub oversample: u32,
    pub clip_envelope: bool,
    pub quadratic_coeff: f64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        PlantSpec::paper_like()
    }
}

impl PlantSpec {
    /// Stand-in for the measured system: m = 0.9, envelope band-limit near
    /// 12 kHz, microphone low-pass near 16 kHz, 1.8 m of air (231 samples at
    /// 44.1 kHz) and a faint noise floor. The gain roughly matches output and
    /// input RMS on the default corpus (small-signal response 0.24 at 2 kHz).
    pub fn paper_like() -> Self {
        PlantSpec {
            kind: PlantKind::Berktay,
            modulation_index: 0.9,
            envelope_cutoff_hz: 12000.0,
            envelope_taps: 17,
            output_cutoff_hz: 16000.0,
            output_taps: 17,
            differentiator_taps: 63,
            delay: 231,
            noise_rms: 1e-4,
            output_gain: 1.7,
            oversample: 2,
            clip_envelope: false,
            quadratic_coeff: 0.1,
        }
    }

    /// Berktay chain with flat filters, no delay, no noise.
    pub fn flat(m: f64) -> Self {
        PlantSpec {
            modulation_index: m,
            envelope_cutoff_hz: 0.0,
            output_cutoff_hz: 0.0,
            delay: 0,
            noise_rms: 0.0,
            output_gain: 1.0,
            ..PlantSpec::paper_like()
        }
    }

    pub fn identity() -> Self {
        PlantSpec {
            kind: PlantKind::Identity,
            noise_rms: 0.0,
            ..PlantSpec::paper_like()
        }
    }

    pub fn pure_delay(delay: usize) -> Self {
        PlantSpec {
            kind: PlantKind::Delay,
            delay,
            output_gain: 1.0,
            noise_rms: 0.0,
            ..PlantSpec::paper_like()
        }
    }

    pub fn quadratic(coeff: f64) -> Self {
        PlantSpec {
            kind: PlantKind::Quadratic,
            quadratic_coeff: coeff,
            noise_rms: 0.0,
            ..PlantSpec::paper_like()
        }
    }

    pub fn build(&self, sample_rate: u32) -> Result<Plant> {
        if !(self.noise_rms >= 0.0 && self.noise_rms.is_finite()) {
            return Err(Error::Config("noise_rms must be >= 0".into()));
        }
        match self.kind {
            PlantKind::Identity => Ok(Plant::Identity),
            PlantKind::Delay => Ok(Plant::Delay {
                delay: self.delay,
                gain: self.output_gain,
            }),
            PlantKind::Quadratic => Ok(Plant::Quadratic {
                coeff: self.quadratic_coeff,
            }),
            PlantKind::Berktay => {
                let inner_rate = sample_rate * self.oversample.max(1);
                let lowpass = |cutoff: f64, taps: usize, rate: u32| {
                    if cutoff > 0.0 {
                        FirFilter::lowpass(taps, cutoff, rate)
                    } else {
                        Ok(FirFilter::identity())
                    }
                };
                PlantConfig::new(
                    self.modulation_index,
                    lowpass(self.envelope_cutoff_hz, self.envelope_taps, inner_rate)?,
                    lowpass(self.output_cutoff_hz, self.output_taps, sample_rate)?,
                    DifferentiatorFilter::design(self.differentiator_taps)?,
                    self.delay,
                    self.noise_rms,
                    self.output_gain,
                    self.oversample,
                    self.clip_envelope,
                )
                .map(Plant::Berktay)
            }
        }
    }
}

/// Runtime parameters of the Berktay chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub modulation_index: f64,
    /// Runs at the oversampled rate.
    pub envelope_filter: FirFilter,
    pub output_filter: FirFilter,
    pub differentiator: DifferentiatorFilter,
    pub plant_delay: usize,
    pub noise_rms: f64,
    pub output_gain: f64,
    pub oversample: u32,
    pub clip_envelope: bool,
    resampler: FirFilter,
}

impl PlantConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        modulation_index: f64,
        envelope_filter: FirFilter,
        output_filter: FirFilter,
        differentiator: DifferentiatorFilter,
        plant_delay: usize,
        noise_rms: f64,
        output_gain: f64,
        oversample: u32,
        clip_envelope: bool,
    ) -> Result<Self> {
        if !(modulation_index > 0.0 && modulation_index <= 1.0) {
            return Err(Error::Config(format!(
                "modulation index {modulation_index} outside (0, 1]"
            )));
        }
        if !(noise_rms >= 0.0) {
            return Err(Error::Config("noise_rms must be >= 0".into()));
        }
        if oversample != 1 && oversample != 2 {
            return Err(Error::Config(format!(
                "oversample factor must be 1 or 2, got {oversample}"
            )));
        }
        // half-band low-pass at the doubled rate
        let resampler = half_band(RESAMPLER_TAPS)?;
        Ok(PlantConfig {
            modulation_index,
            envelope_filter,
            output_filter,
            differentiator,
            plant_delay,
            noise_rms,
            output_gain,
            oversample,
            clip_envelope,
            resampler,
        })
    }

    /// Small-signal latency in samples at the working rate.
    pub fn latency(&self) -> usize {
        let os = self.oversample as usize;
        let inner = self.envelope_filter.nominal_delay()
            + self.differentiator.group_delay()
            + if os == 2 { RESAMPLER_TAPS - 1 } else { 0 };
        (inner + os / 2) / os + self.output_filter.nominal_delay() + self.plant_delay
    }

    pub fn without_noise(&self) -> PlantConfig {
        PlantConfig {
            noise_rms: 0.0,
            ..self.clone()
        }
    }
}

fn half_band(taps: usize) -> Result<FirFilter> {
    // a cutoff of fs/4 expressed with a notional rate of 4 Hz
    FirFilter::lowpass(taps, 1.0, 4)
}

/// Runs the DSBAM/Berktay chain on `u`. Output length equals input length;
/// the result is a pure function of `(u, cfg, seed)`.
pub fn simulate_pal(u: &Signal, cfg: &PlantConfig, seed: u64) -> Signal {
    let n = u.len();
    let m = cfg.modulation_index;
    let os = cfg.oversample as usize;

    let up: Vec<f64> = if os == 2 {
        let mut stuffed = vec![0.0; 2 * n];
        for (i, &v) in u.samples().iter().enumerate() {
            stuffed[2 * i] = 2.0 * v;
        }
        cfg.resampler.apply_slice(&stuffed)
    } else {
        u.samples().to_vec()
    };

    // the carrier has been on forever: filter and square only the excess
    // over the unit envelope, whose constant part D² maps to zero
    let excess: Vec<f64> = up
        .iter()
        .map(|&x| if cfg.clip_envelope { (m * x).max(-1.0) } else { m * x })
        .collect();
    let shaped = cfg.envelope_filter.apply_slice(&excess);
    let squared: Vec<f64> = shaped.iter().map(|s| 2.0 * s + s * s).collect();
    // D² is per inner sample; rescale so the gain does not depend on `os`
    let mut audio = cfg.differentiator.apply(&squared);
    let rescale = cfg.output_gain * (os * os) as f64;
    audio.iter_mut().for_each(|v| *v *= rescale);

    let base: Vec<f64> = if os == 2 {
        cfg.resampler
            .apply_slice(&audio)
            .into_iter()
            .step_by(2)
            .collect()
    } else {
        audio
    };

    let filtered = cfg.output_filter.apply_slice(&base);
    let mut out = vec![0.0; n];
    if cfg.plant_delay < n {
        out[cfg.plant_delay..].copy_from_slice(&filtered[..n - cfg.plant_delay]);
    }
    if cfg.noise_rms > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, cfg.noise_rms).expect("noise_rms checked at construction");
        out.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    Signal::from_parts(out, u.sample_rate())
}

/// A runnable plant: the Berktay chain or one of the fixture systems.
#[derive(Debug, Clone, PartialEq)]
pub enum Plant {
    Berktay(PlantConfig),
    Identity,
    Delay { delay: usize, gain: f64 },
    Quadratic { coeff: f64 },
}

impl Plant {
    pub fn simulate(&self, u: &Signal, seed: u64) -> Signal {
        match self {
            Plant::Berktay(cfg) => simulate_pal(u, cfg, seed),
            Plant::Identity => u.clone(),
            Plant::Delay { delay, gain } => u.delayed(*delay).scaled(*gain),
            Plant::Quadratic { coeff } => Signal::from_parts(
                u.samples().iter().map(|&x| x + coeff * x * x).collect(),
                u.sample_rate(),
            ),
        }
    }

    pub fn latency(&self) -> usize {
        match self {
            Plant::Berktay(cfg) => cfg.latency(),
            Plant::Delay { delay, .. } => *delay,
            _ => 0,
        }
    }

    pub fn without_noise(&self) -> Plant {
        match self {
            Plant::Berktay(cfg) => Plant::Berktay(cfg.without_noise()),
            other => other.clone(),
        }
    }
}

/// Loads a measured (input, output) WAV pair, truncated to the shorter one.
pub fn ingest_measured_pair(
    input_path: impl AsRef<Path>,
    output_path: impl AsRef<Path>,
) -> Result<(Signal, Signal)> {
    let u = wav_read(input_path)?;
    let y = wav_read(output_path)?;
    if u.sample_rate() != y.sample_rate() {
        return Err(Error::Signal(format!(
            "sample rate mismatch: input {} Hz, output {} Hz",
            u.sample_rate(),
            y.sample_rate()
        )));
    }
    let n = u.len().min(y.len());
    Ok((u.truncated(n), y.truncated(n)))
}
