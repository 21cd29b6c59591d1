//! Waveform plus magnitude-spectrogram mean-squared error.

use crate::dsp::{Complex64, Signal, StftConfig, StftEngine};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LossValue {
    pub total: f64,
    pub waveform: f64,
    pub spectral: f64,
    /// `dL/d estimate`, full length, zero over the skipped prefix.
    pub grad: Vec<f64>,
}

/// Fixed weighting applied to both signals before the loss: `order`
/// cascaded sections `(1 − z⁻¹) / (1 − a·z⁻¹)²`, scaled to unit gain at
/// `reference_hz`. The response peaks near the corner, rises 6 dB per octave
/// and section below it and falls 6 dB per octave and section above it.
/// DC is never weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emphasis {
    pole: f64,
    gain: f64,
    order: usize,
}

impl Emphasis {
    pub fn new(corner_hz: f64, order: usize, reference_hz: f64, sample_rate: u32) -> Result<Self> {
        let fs = sample_rate as f64;
        if !(1..=4).contains(&order) {
            return Err(Error::Config(format!("emphasis order {order} not in 1..=4")));
        }
        if !(corner_hz > 0.0 && reference_hz > 0.0 && reference_hz < fs / 2.0 && corner_hz < fs / 2.0) {
            return Err(Error::Config(format!(
                "emphasis corner {corner_hz} Hz / reference {reference_hz} Hz invalid at {fs} Hz"
            )));
        }
        let pole = (-std::f64::consts::TAU * corner_hz / fs).exp();
        let z = Complex64::from_polar(1.0, -std::f64::consts::TAU * reference_hz / fs);
        let one = Complex64::new(1.0, 0.0);
        let section = (one - z).norm() / (one - z * pole).norm_sqr();
        Ok(Emphasis {
            pole,
            gain: section.powi(-(order as i32)),
            order,
        })
    }

    /// Filters `x` in place, starting from rest.
    pub fn apply(&self, x: &mut [f64]) {
        for _ in 0..self.order {
            let mut prev = 0.0;
            for v in x.iter_mut() {
                let d = *v - prev;
                prev = *v;
                *v = d;
            }
            for _ in 0..2 {
                let mut s = 0.0;
                for v in x.iter_mut() {
                    s = *v + self.pole * s;
                    *v = s;
                }
            }
        }
        x.iter_mut().for_each(|v| *v *= self.gain);
    }

    /// Transpose of [`Emphasis::apply`]. The filter matrix is lower
    /// triangular Toeplitz, so its transpose is the same filter run on the
    /// time-reversed signal.
    pub fn apply_adjoint(&self, g: &mut [f64]) {
        g.reverse();
        self.apply(g);
        g.reverse();
    }
}

/// `MSE(y1, y2) + MSE(|Y1|, |Y2|)` with a reusable STFT plan, optionally on
/// emphasis-filtered signals.
#[derive(Debug)]
pub struct SpectralLoss {
    engine: StftEngine,
    emphasis: Option<Emphasis>,
}

impl SpectralLoss {
    pub fn new(cfg: &StftConfig) -> Result<Self> {
        Ok(SpectralLoss {
            engine: StftEngine::new(cfg)?,
            emphasis: None,
        })
    }

    pub fn with_emphasis(mut self, emphasis: Option<Emphasis>) -> Self {
        self.emphasis = emphasis;
        self
    }

    pub fn config(&self) -> &StftConfig {
        self.engine.config()
    }

    /// Loss over `[skip..]` of both sequences and its gradient with respect
    /// to `estimate`.
    pub fn evaluate(&self, target: &[f64], estimate: &[f64], skip: usize) -> Result<LossValue> {
        if target.len() != estimate.len() {
            return Err(Error::Shape(format!(
                "target has {} samples, estimate {}",
                target.len(),
                estimate.len()
            )));
        }
        let n = target.len().saturating_sub(skip);
        if n < self.engine.config().window_length {
            return Err(Error::Signal(format!(
                "{n} samples after warm-up is shorter than one stft window"
            )));
        }
        let (mut tf, mut ef);
        let (t, e) = match &self.emphasis {
            None => (&target[skip..], &estimate[skip..]),
            Some(f) => {
                tf = target[skip..].to_vec();
                ef = estimate[skip..].to_vec();
                f.apply(&mut tf);
                f.apply(&mut ef);
                (&tf[..], &ef[..])
            }
        };
        let mut grad = vec![0.0; target.len()];
        let mut waveform = 0.0;
        for (i, (a, b)) in t.iter().zip(e).enumerate() {
            let d = b - a;
            waveform += d * d;
            grad[skip + i] = 2.0 * d / n as f64;
        }
        waveform /= n as f64;

        let st = self.engine.spectra(t)?;
        let se = self.engine.spectra(e)?;
        let count = st.len() as f64;
        let mut spectral = 0.0;
        let dspec: Vec<Complex64> = st
            .iter()
            .zip(&se)
            .map(|(a, b)| {
                let (ma, mb) = (a.norm(), b.norm());
                let d = mb - ma;
                spectral += d * d;
                if mb > 0.0 {
                    b * (2.0 * d / (count * mb))
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        spectral /= count;
        let gs = self.engine.adjoint(&dspec, n);
        grad[skip..].iter_mut().zip(&gs).for_each(|(g, s)| *g += s);
        if let Some(f) = &self.emphasis {
            f.apply_adjoint(&mut grad[skip..]);
        }
        Ok(LossValue {
            total: waveform + spectral,
            waveform,
            spectral,
            grad,
        })
    }
}

/// Loss of `y2` against `y1` and its gradient with respect to `y2`.
pub fn loss_eq3(y1: &Signal, y2: &Signal, stft: &StftConfig) -> Result<(f64, Vec<f64>)> {
    let v = SpectralLoss::new(stft)?.evaluate(y1.samples(), y2.samples(), 0)?;
    Ok((v.total, v.grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const FS: u32 = 44100;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.3).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    fn small() -> StftConfig {
        StftConfig {
            window_length: 256,
            hop: 64,
            ..StftConfig::default()
        }
    }

    #[test]
    fn equal_signals_have_zero_loss() {
        let y = Signal::new(noise(4096, 1), FS).unwrap();
        let (l, g) = loss_eq3(&y, &y, &StftConfig::default()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_offset() {
        let n = 4096;
        let y1 = Signal::sine(n, FS, 44100.0 / 64.0, 0.5, 0.0);
        let c = 0.1;
        let y2 = Signal::new(y1.samples().iter().map(|v| v + c).collect(), FS).unwrap();
        let cfg = StftConfig::default();
        let loss = SpectralLoss::new(&cfg).unwrap();
        let v = loss.evaluate(y1.samples(), y2.samples(), 0).unwrap();
        assert!((v.waveform - c * c).abs() < 1e-15);
        // brute-force windowed DFT of every frame
        let w = cfg.window_taps();
        let frames = cfg.frame_count(n);
        let mut acc = 0.0;
        for f in 0..frames {
            for b in 0..cfg.bins() {
                let mag = |x: &[f64]| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for t in 0..cfg.window_length {
                        let ph = -2.0 * std::f64::consts::PI * (b * t) as f64 / cfg.window_length as f64;
                        let s = w[t] * x[f * cfg.hop + t];
                        re += s * ph.cos();
                        im += s * ph.sin();
                    }
                    (re * re + im * im).sqrt()
                };
                acc += (mag(y2.samples()) - mag(y1.samples())).powi(2);
            }
        }
        let oracle = acc / (frames * cfg.bins()) as f64;
        assert!((v.spectral - oracle).abs() < 1e-9 * oracle.max(1.0), "{} vs {oracle}", v.spectral);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let n = 2048;
        let a = noise(n, 2);
        let b = noise(n, 3);
        let loss = SpectralLoss::new(&small()).unwrap();
        for skip in [0, 300] {
            let v = loss.evaluate(&a, &b, skip).unwrap();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for i in (skip..n).step_by(37) {
                let mut p = b.clone();
                p[i] += h;
                let up = loss.evaluate(&a, &p, skip).unwrap().total;
                p[i] -= 2.0 * h;
                let down = loss.evaluate(&a, &p, skip).unwrap().total;
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((fd - v.grad[i]).abs() / fd.abs().max(v.grad[i].abs()).max(1e-9));
            }
            assert!(worst < 1e-4, "{worst}");
            assert!(v.grad[..skip].iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn emphasized_gradient_matches_finite_differences() {
        let n = 2048;
        let a = noise(n, 6);
        let b = noise(n, 7);
        let emph = Emphasis::new(100.0, 2, 1000.0, FS).unwrap();
        let loss = SpectralLoss::new(&small()).unwrap().with_emphasis(Some(emph));
        let skip = 200;
        let v = loss.evaluate(&a, &b, skip).unwrap();
        let h = 1e-5;
        for i in (skip..n).step_by(53) {
            let mut p = b.clone();
            p[i] += h;
            let up = loss.evaluate(&a, &p, skip).unwrap().total;
            p[i] -= 2.0 * h;
            let down = loss.evaluate(&a, &p, skip).unwrap().total;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - v.grad[i]).abs() / fd.abs().max(v.grad[i].abs()).max(1e-9);
            assert!(err < 1e-4, "sample {i}: {err}");
        }
        assert!(v.grad[..skip].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn emphasis_has_unit_gain_at_reference() {
        let n = 44100;
        let level = |e: &Emphasis, f: f64| {
            let mut x = Signal::sine(n, FS, f, 1.0, 0.0).samples().to_vec();
            e.apply(&mut x);
            20.0 * x[n / 2..].iter().fold(0.0f64, |m, v| m.max(v.abs())).log10()
        };
        for order in 1..=2 {
            let emph = Emphasis::new(100.0, order, 1000.0, FS).unwrap();
            assert!(level(&emph, 1000.0).abs() < 0.01);
            // two octaves above the reference: roughly −12 dB per section
            let drop = -12.0 * order as f64;
            assert!((level(&emph, 4000.0) - drop).abs() < 1.5, "order {order}");
            let mut dc = vec![1.0; n];
            emph.apply(&mut dc);
            assert!(dc[n - 1].abs() < 1e-6);
        }
        assert!(Emphasis::new(100.0, 0, 1000.0, FS).is_err());
    }

    #[test]
    fn warm_up_is_ignored() {
        let a = noise(2048, 4);
        let b = noise(2048, 5);
        let loss = SpectralLoss::new(&small()).unwrap();
        let mut a2 = a.clone();
        a2[..500].iter_mut().for_each(|v| *v = 9.0);
        let x = loss.evaluate(&a, &b, 500).unwrap();
        let y = loss.evaluate(&a2, &b, 500).unwrap();
        assert_eq!(x.total, y.total);
    }

    #[test]
    fn rejects_bad_lengths() {
        let loss = SpectralLoss::new(&small()).unwrap();
        assert!(loss.evaluate(&[0.0; 300], &[0.0; 301], 0).is_err());
        assert!(loss.evaluate(&[0.0; 300], &[0.0; 300], 100).is_err());
    }
}
