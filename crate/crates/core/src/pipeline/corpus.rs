//! Seeded synthetic training corpus.
//!
//! Clips of five source classes are drawn at random, faded in and out,
//! concatenated and peak-normalized. Every class is confined to
//! 100 Hz–10 kHz.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{fft_inverse, Complex64, Signal};
use crate::error::{Error, Result};

pub const BAND_LOW_HZ: f64 = 100.0;
pub const BAND_HIGH_HZ: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceClass {
    ColoredNoise,
    Multitone,
    SweptSine,
    ModulatedTone,
    SpeechNoise,
}

impl SourceClass {
    pub const ALL: [SourceClass; 5] = [
        SourceClass::ColoredNoise,
        SourceClass::Multitone,
        SourceClass::SweptSine,
        SourceClass::ModulatedTone,
        SourceClass::SpeechNoise,
    ];
}

/// Relative frequency of each source class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassWeights {
    pub colored_noise: f64,
    pub multitone: f64,
    pub swept_sine: f64,
    pub modulated_tone: f64,
    pub speech_noise: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights {
            colored_noise: 0.25,
            multitone: 0.2,
            swept_sine: 0.15,
            modulated_tone: 0.2,
            speech_noise: 0.2,
        }
    }
}

impl ClassWeights {
    fn as_array(&self) -> [f64; 5] {
        [
            self.colored_noise,
            self.multitone,
            self.swept_sine,
            self.modulated_tone,
            self.speech_noise,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub duration_secs: f64,
    pub sample_rate: u32,
    /// Peak level of the whole corpus after normalization.
    pub peak: f64,
    pub clip_secs: f64,
    /// Per-clip level spread below full level, in dB.
    pub level_range_db: f64,
    pub weights: ClassWeights,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            duration_secs: 600.0,
            sample_rate: 44100,
            peak: 0.7,
            clip_secs: 2.0,
            level_range_db: 14.0,
            weights: ClassWeights::default(),
            seed: 1,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("corpus: {m}")));
        if !(self.duration_secs > 0.0 && self.duration_secs.is_finite()) {
            return bad("duration must be positive".into());
        }
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if !(self.peak > 0.0 && self.peak <= 1.0) {
            return bad(format!("peak {} outside (0, 1]", self.peak));
        }
        if !(self.clip_secs > 0.0) || self.level_range_db < 0.0 {
            return bad("clip length must be positive and level range non-negative".into());
        }
        let w = self.weights.as_array();
        if w.iter().any(|&v| !(v >= 0.0)) {
            return bad("class weights must be non-negative".into());
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("class weights sum to {sum}, not 1"));
        }
        if 2.0 * BAND_HIGH_HZ >= self.sample_rate as f64 {
            return bad("sample rate too low for the 10 kHz corpus band".into());
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        (self.duration_secs * self.sample_rate as f64).round() as usize
    }
}

/// Deterministic corpus of `duration_secs` at `sample_rate`, peak = `peak`.
pub fn synthesize_corpus(cfg: &CorpusConfig) -> Result<Signal> {
    cfg.validate()?;
    let total = cfg.total_samples();
    let fs = cfg.sample_rate as f64;
    let clip_len = ((cfg.clip_secs * fs) as usize).max(1);
    let weights = cfg.weights.as_array();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        let len = clip_len.min(total - out.len());
        let class = pick_class(&weights, &mut rng);
        let mut clip = generate_clip(class, len, fs, &mut rng);
        normalize_peak(&mut clip, 1.0);
        let gain = 10f64.powf(-rng.random_range(0.0..=cfg.level_range_db) / 20.0);
        fade(&mut clip, (0.01 * fs) as usize);
        out.extend(clip.iter().map(|v| v * gain));
    }
    normalize_peak(&mut out, cfg.peak);
    Signal::new(out, cfg.sample_rate)
}

fn pick_class(weights: &[f64; 5], rng: &mut ChaCha8Rng) -> SourceClass {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if r < acc {
            return SourceClass::ALL[i];
        }
    }
    // rounding can leave r just above the final sum
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    SourceClass::ALL[last]
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let p = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if p > 0.0 {
        let g = peak / p;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

fn fade(x: &mut [f64], n: usize) {
    let n = n.min(x.len() / 2);
    for i in 0..n {
        let g = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / n as f64).cos();
        x[i] *= g;
        let j = x.len() - 1 - i;
        x[j] *= g;
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn generate_clip(class: SourceClass, len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match class {
        SourceClass::ColoredNoise => {
            let alpha = rng.random_range(0.0..1.5);
            shaped_noise(len, fs, rng, |f| f.powf(-alpha / 2.0))
        }
        SourceClass::SpeechNoise => {
            // long-term speech spectrum: flat to ~500 Hz, then −9 dB/octave,
            // with syllable-rate amplitude modulation
            let mut x = shaped_noise(len, fs, rng, |f| 1.0 / (1.0 + (f / 500.0).powf(1.5)));
            let rate = rng.random_range(3.0..6.0);
            let phase = rng.random_range(0.0..TAU);
            for (t, v) in x.iter_mut().enumerate() {
                let m = 0.5 + 0.5 * (TAU * rate * t as f64 / fs + phase).sin();
                *v *= 0.15 + 0.85 * m * m;
            }
            x
        }
        SourceClass::Multitone => {
            let count = rng.random_range(3..=8);
            let tones: Vec<(f64, f64, f64)> = (0..count)
                .map(|_| {
                    (
                        log_uniform(rng, 150.0, 9000.0),
                        rng.random_range(0.2..1.0),
                        rng.random_range(0.0..TAU),
                    )
                })
                .collect();
            (0..len)
                .map(|t| {
                    let tt = t as f64 / fs;
                    tones.iter().map(|(f, a, p)| a * (TAU * f * tt + p).sin()).sum()
                })
                .collect()
        }
        SourceClass::SweptSine => {
            let (mut f0, mut f1) = (BAND_LOW_HZ * 1.5, BAND_HIGH_HZ * 0.9);
            if rng.random::<bool>() {
                std::mem::swap(&mut f0, &mut f1);
            }
            let dur = len as f64 / fs;
            let k = (f1 / f0).ln() / dur;
            (0..len)
                .map(|t| {
                    let tt = t as f64 / fs;
                    (TAU * f0 * ((k * tt).exp() - 1.0) / k).sin()
                })
                .collect()
        }
        SourceClass::ModulatedTone => {
            let fc = log_uniform(rng, 200.0, 8000.0);
            let rate = log_uniform(rng, 1.0, 20.0);
            let frequency_modulated = rng.random::<bool>();
            let depth = rng.random_range(0.2..0.8);
            let mut phase = rng.random_range(0.0..TAU);
            (0..len)
                .map(|t| {
                    let lfo = (TAU * rate * t as f64 / fs).sin();
                    if frequency_modulated {
                        phase += TAU * fc * (1.0 + 0.3 * depth * lfo) / fs;
                        phase.sin()
                    } else {
                        phase += TAU * fc / fs;
                        (1.0 + depth * lfo) * phase.sin()
                    }
                })
                .collect()
        }
    }
}

/// Gaussian noise with amplitude response `shape(f)` inside the corpus band,
/// synthesized in the frequency domain.
fn shaped_noise(len: usize, fs: f64, rng: &mut ChaCha8Rng, shape: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = len.next_power_of_two().max(2);
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..n / 2 {
        let f = k as f64 * fs / n as f64;
        if !(BAND_LOW_HZ..=BAND_HIGH_HZ).contains(&f) {
            continue;
        }
        let a = shape(f);
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        spec[k] = Complex64::new(a * re, a * im);
        spec[n - k] = spec[k].conj();
    }
    let time = fft_inverse(&spec).expect("power-of-two length");
    time[..len].iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(secs: f64) -> CorpusConfig {
        CorpusConfig {
            duration_secs: secs,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn each_class_is_finite_and_nonzero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for class in SourceClass::ALL {
            let x = generate_clip(class, 4410, 44100.0, &mut rng);
            assert_eq!(x.len(), 4410);
            assert!(x.iter().all(|v| v.is_finite()));
            assert!(x.iter().any(|v| v.abs() > 1e-6), "{class:?}");
        }
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mut cfg = short(1.0);
        cfg.weights.multitone = 0.5;
        assert!(cfg.validate().is_err());
        cfg.weights = ClassWeights {
            colored_noise: 1.0,
            multitone: 0.0,
            swept_sine: 0.0,
            modulated_tone: 0.0,
            speech_noise: 0.0,
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn single_class_corpus_only_draws_that_class() {
        let w = [0.0, 0.0, 1.0, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            assert_eq!(pick_class(&w, &mut rng), SourceClass::SweptSine);
        }
    }

    #[test]
    fn fade_zeroes_endpoints() {
        let mut x = vec![1.0; 100];
        fade(&mut x, 10);
        assert_eq!(x[0], 0.0);
        assert_eq!(x[99], 0.0);
        assert_eq!(x[50], 1.0);
    }
}
