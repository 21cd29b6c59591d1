use rustfft::FftPlanner;

pub use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

fn check_length(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Config(format!("fft length {n} is not a power of two")));
    }
    Ok(())
}

/// Forward DFT of `x` zero-padded to `n` points.
pub fn fft_forward(x: &[f64], n: usize) -> Result<Vec<Complex64>> {
    check_length(n)?;
    if x.len() > n {
        return Err(Error::Config(format!(
            "input of {} samples does not fit an fft of length {n}",
            x.len()
        )));
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    Ok(buf)
}

/// Inverse DFT including the `1/n` factor, so it undoes [`fft_forward`].
pub fn fft_inverse(spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = spectrum.len();
    check_length(n)?;
    let mut buf = spectrum.to_vec();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn impulse_has_flat_spectrum() {
        let spec = fft_forward(&[1.0], 8).unwrap();
        for c in spec {
            assert!((c - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn cosine_lands_in_two_bins() {
        let n = 64;
        let x: Vec<f64> = (0..n)
            .map(|t| (std::f64::consts::TAU * 4.0 * t as f64 / n as f64).cos())
            .collect();
        let spec = fft_forward(&x, n).unwrap();
        for (k, c) in spec.iter().enumerate() {
            let expected = if k == 4 || k == 60 { 32.0 } else { 0.0 };
            assert!((c.norm() - expected).abs() < 1e-12, "bin {k}: {}", c.norm());
        }
    }

    #[test]
    fn parseval_matches_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = fft_forward(&x, 256)
            .unwrap()
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            / 256.0;
        assert!(((time - freq) / time).abs() < 1e-10);
    }

    #[test]
    fn round_trip_is_exact_to_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..1024).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = fft_inverse(&fft_forward(&x, 1024).unwrap()).unwrap();
        let err = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b.re).abs().max(b.im.abs()))
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(fft_forward(&[1.0], 12), Err(Error::Config(_))));
        assert!(fft_forward(&[0.0; 9], 8).is_err());
    }
}
