use super::Signal;
use crate::error::{Error, Result};

/// Nominal base-10 one-third-octave band centers, 25 Hz to 20 kHz.
pub const NOMINAL_THIRD_OCTAVE_CENTERS: [f64; 30] = [
    25.0, 31.5, 40.0, 50.0, 63.0, 80.0, 100.0, 125.0, 160.0, 200.0, 250.0, 315.0, 400.0, 500.0,
    630.0, 800.0, 1000.0, 1250.0, 1600.0, 2000.0, 2500.0, 3150.0, 4000.0, 5000.0, 6300.0, 8000.0,
    10000.0, 12500.0, 16000.0, 20000.0,
];

/// Nominal third-octave centers inside `[fmin, fmax]`.
pub fn third_octave_centers(fmin: f64, fmax: f64) -> Vec<f64> {
    NOMINAL_THIRD_OCTAVE_CENTERS
        .iter()
        .copied()
        .filter(|&f| f >= fmin && f <= fmax)
        .collect()
}

/// Power `A²/2` of the component `A·sin(2πft + φ)` in
/// `x[skip .. skip + span]`, by correlating with a quadrature pair at `f`.
///
/// The span must hold an integer number of cycles of `f`; otherwise the
/// estimate picks up leakage from neighbouring components and an error is
/// returned instead.
pub fn tone_power(x: &Signal, freq: f64, skip: usize, span: usize) -> Result<f64> {
    let fs = x.sample_rate() as f64;
    if span == 0 || skip + span > x.len() {
        return Err(Error::Measurement(format!(
            "analysis window {skip}+{span} exceeds signal length {}",
            x.len()
        )));
    }
    if !(freq > 0.0 && freq < fs / 2.0) {
        return Err(Error::Measurement(format!(
            "tone frequency {freq} Hz outside (0, {} Hz)",
            fs / 2.0
        )));
    }
    let cycles = span as f64 * freq / fs;
    if (cycles - cycles.round()).abs() > 1e-9 * cycles.max(1.0) {
        return Err(Error::Measurement(format!(
            "{freq} Hz is not coherent with a {span}-sample span ({cycles} cycles)"
        )));
    }
    let data = &x.samples()[skip..skip + span];
    let (mut c, mut s) = (0.0, 0.0);
    for (n, &v) in data.iter().enumerate() {
        let turns = freq * (skip + n) as f64 / fs;
        let phase = std::f64::consts::TAU * (turns - turns.floor());
        let (sn, cs) = phase.sin_cos();
        c += v * cs;
        s += v * sn;
    }
    let scale = 2.0 / span as f64;
    let (c, s) = (c * scale, s * scale);
    Ok(0.5 * (c * c + s * s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_tone_power_is_half_amplitude_squared() {
        let x = Signal::sine(44100, 44100, 1000.0, 0.5, 0.3);
        assert!((tone_power(&x, 1000.0, 0, 44100).unwrap() - 0.125).abs() < 1e-9);
        assert!(tone_power(&x, 2000.0, 0, 44100).unwrap() <= 1e-12);
    }

    #[test]
    fn third_harmonic_power() {
        let a = Signal::sine(44100, 44100, 1000.0, 0.3, 0.0);
        let b = Signal::sine(44100, 44100, 3000.0, 0.1, 1.1);
        let x = Signal::new(
            a.samples().iter().zip(b.samples()).map(|(p, q)| p + q).collect(),
            44100,
        )
        .unwrap();
        assert!((tone_power(&x, 3000.0, 0, 44100).unwrap() - 0.005).abs() < 1e-9);
        assert!((tone_power(&x, 1000.0, 0, 44100).unwrap() - 0.045).abs() < 1e-9);
    }

    #[test]
    fn skipped_window_keeps_phase_reference() {
        let x = Signal::sine(88200, 44100, 440.0, 0.7, 0.0);
        let p = tone_power(&x, 440.0, 20000, 44100).unwrap();
        assert!((p - 0.245).abs() < 1e-9);
    }

    #[test]
    fn incoherent_frequency_rejected() {
        let x = Signal::sine(1000, 44100, 1000.0, 0.5, 0.0);
        assert!(matches!(
            tone_power(&x, 1000.0, 0, 1000),
            Err(Error::Measurement(_))
        ));
    }

    #[test]
    fn third_octave_ranges() {
        let all = third_octave_centers(250.0, 8000.0);
        assert_eq!(
            all,
            vec![
                250.0, 315.0, 400.0, 500.0, 630.0, 800.0, 1000.0, 1250.0, 1600.0, 2000.0, 2500.0,
                3150.0, 4000.0, 5000.0, 6300.0, 8000.0
            ]
        );
        assert_eq!(third_octave_centers(250.0, 4000.0), all[..13].to_vec());
        assert_eq!(third_octave_centers(900.0, 1100.0), vec![1000.0]);
        assert!(third_octave_centers(1100.0, 1200.0).is_empty());
    }
}
