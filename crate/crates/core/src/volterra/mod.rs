//! Second-order Volterra baseline: NLMS identification, an LMS linear
//! reference model, delayed linear inversion and pth-order pre-inverses.

mod adapt;
mod inverse;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adapt::{lms_fir_identify, nlms_identify, LmsFirReport, NlmsReport, VolterraSizes};
pub use inverse::{
    design_delayed_inverse, linear_reference, pth_order_inverse, DelayedInverse,
    VolterraCompensator,
};

use crate::dsp::{convolve_causal, FirFilter, Signal};
use crate::error::{Error, Result};
use crate::pipeline::checkpoint::{CheckpointReader, CheckpointWriter, Metadata};

const VOLTERRA_MAGIC: &[u8; 8] = b"PALDCVLT";
const LINREF_MAGIC: &[u8; 8] = b"PALDCLIN";
const FORMAT_VERSION: u32 = 1;

/// Truncated second-order Volterra kernel pair.
///
/// The symmetric quadratic kernel is stored once over lag pairs `i <= j`,
/// grouped by lag difference `j - i` (all `(i, i)`, then all `(i, i+1)`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraModel {
    h1: Vec<f64>,
    n2: usize,
    h2: Vec<f64>,
}

/// Offset of diagonal `delta` in the packed quadratic kernel.
fn diag_offset(n2: usize, delta: usize) -> usize {
    delta * n2 - delta * delta.saturating_sub(1) / 2
}

impl VolterraModel {
    pub fn zeros(n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::Config("volterra memories must be >= 1".into()));
        }
        Ok(VolterraModel {
            h1: vec![0.0; n1],
            n2,
            h2: vec![0.0; n2 * (n2 + 1) / 2],
        })
    }

    /// `h2` in packed diagonal-major order.
    pub fn from_parts(h1: Vec<f64>, n2: usize, h2: Vec<f64>) -> Result<Self> {
        if h1.is_empty() || n2 == 0 || h2.len() != n2 * (n2 + 1) / 2 {
            return Err(Error::Shape(format!(
                "volterra kernels: n1={}, n2={n2}, packed h2 len {}",
                h1.len(),
                h2.len()
            )));
        }
        Ok(VolterraModel { h1, n2, h2 })
    }

    pub fn n1(&self) -> usize {
        self.h1.len()
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn h1(&self) -> &[f64] {
        &self.h1
    }

    pub fn h1_mut(&mut self) -> &mut [f64] {
        &mut self.h1
    }

    pub fn h2_packed(&self) -> &[f64] {
        &self.h2
    }

    pub(crate) fn coefficients_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.h1, &mut self.h2)
    }

    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        assert!(j < self.n2, "lag ({i}, {j}) outside memory {}", self.n2);
        diag_offset(self.n2, j - i) + i
    }

    /// Quadratic coefficient for lags `(i, j)`; symmetric in its arguments.
    pub fn h2(&self, i: usize, j: usize) -> f64 {
        self.h2[self.index(i, j)]
    }

    pub fn set_h2(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.h2[k] = v;
    }

    pub fn h2_energy(&self) -> f64 {
        self.h2.iter().map(|v| v * v).sum()
    }

    /// `Σ_i h1[i]·u[n-i]`.
    pub fn linear_part(&self, u: &[f64]) -> Vec<f64> {
        convolve_causal(u, &self.h1)
    }

    /// `Σ_{i<=j} h2[i,j]·u[n-i]·u[n-j]`, evaluated one lag difference at a
    /// time as an FIR over the product sequence `u[n]·u[n-δ]`.
    pub fn quadratic_part(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut out = vec![0.0; n];
        let mut prod = vec![0.0; n];
        for delta in 0..self.n2 {
            let taps = &self.h2[diag_offset(self.n2, delta)..][..self.n2 - delta];
            if taps.iter().all(|&t| t == 0.0) {
                continue;
            }
            prod.iter_mut().for_each(|p| *p = 0.0);
            for t in delta..n {
                prod[t] = u[t] * u[t - delta];
            }
            let part = convolve_causal(&prod, taps);
            out.iter_mut().zip(&part).for_each(|(o, p)| *o += p);
        }
        out
    }

    pub fn summary(&self) -> String {
        let h1_peak = (0..self.n1())
            .max_by(|&a, &b| self.h1[a].abs().total_cmp(&self.h1[b].abs()))
            .unwrap_or(0);
        let h1_energy: f64 = self.h1.iter().map(|v| v * v).sum();
        format!(
            "volterra model\n  h1: {} taps, energy {:.6e}, peak at lag {}\n  h2: memory {} ({} coefficients), energy {:.6e}, h2(0,0) = {:.6e}\n",
            self.n1(),
            h1_energy,
            h1_peak,
            self.n2,
            self.h2.len(),
            self.h2_energy(),
            self.h2(0, 0)
        )
    }

    pub fn to_bytes(&self, meta: &Metadata) -> Vec<u8> {
        let mut w = CheckpointWriter::new(VOLTERRA_MAGIC, FORMAT_VERSION, meta);
        w.put_u32(self.n1() as u32);
        w.put_u32(self.n2 as u32);
        w.put_f64s(&self.h1);
        w.put_f64s(&self.h2);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Metadata)> {
        let mut r = CheckpointReader::open(bytes, VOLTERRA_MAGIC, FORMAT_VERSION)?;
        let n1 = r.u32()? as usize;
        let n2 = r.u32()? as usize;
        let h1 = r.f64s()?;
        let h2 = r.f64s()?;
        let meta = std::mem::take(&mut r.meta);
        r.finish()?;
        if h1.len() != n1 {
            return Err(Error::Checkpoint(format!("h1 has {} taps, header says {n1}", h1.len())));
        }
        let model = VolterraModel::from_parts(h1, n2, h2)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((model, meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &Metadata) -> Result<()> {
        std::fs::write(path, self.to_bytes(meta))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Metadata)> {
        VolterraModel::from_bytes(&std::fs::read(path)?)
    }
}

/// `y[n] = Σ h1[i]·u[n-i] + Σ_{i<=j} h2[i,j]·u[n-i]·u[n-j]`, zero initial state.
pub fn volterra_predict(model: &VolterraModel, u: &Signal) -> Signal {
    let mut y = model.linear_part(u.samples());
    let q = model.quadratic_part(u.samples());
    y.iter_mut().zip(&q).for_each(|(a, b)| *a += b);
    Signal::from_parts(y, u.sample_rate())
}

/// NLMS step settings shared by the Volterra and FIR adaptations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlmsConfig {
    pub step_mu: f64,
    pub regularization: f64,
    pub passes: usize,
}

impl Default for NlmsConfig {
    fn default() -> Self {
        NlmsConfig {
            step_mu: 0.01,
            regularization: 1e-6,
            passes: 3,
        }
    }
}

impl NlmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_mu > 0.0 && self.step_mu < 2.0) {
            return Err(Error::Config(format!(
                "nlms step {} outside (0, 2)",
                self.step_mu
            )));
        }
        if !(self.regularization > 0.0) {
            return Err(Error::Config("nlms regularization must be positive".into()));
        }
        if self.passes == 0 {
            return Err(Error::Config("nlms needs at least one pass".into()));
        }
        Ok(())
    }
}

/// LMS-identified linear model of the plant plus the target delay used when
/// training inverse filters against it.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearReferenceModel {
    pub h_lin: FirFilter,
    pub delay: usize,
}

impl LinearReferenceModel {
    pub fn new(h_lin: FirFilter, delay: usize) -> Self {
        LinearReferenceModel { h_lin, delay }
    }

    /// Lag of the largest-magnitude tap: the bulk latency of the plant.
    pub fn peak_lag(&self) -> usize {
        let taps = self.h_lin.taps();
        (0..taps.len())
            .max_by(|&a, &b| taps[a].abs().total_cmp(&taps[b].abs()))
            .unwrap_or(0)
    }

    pub fn summary(&self) -> String {
        format!(
            "linear reference model\n  taps: {}\n  peak lag: {}\n  target delay: {}\n",
            self.h_lin.len(),
            self.peak_lag(),
            self.delay
        )
    }

    pub fn to_bytes(&self, meta: &Metadata) -> Vec<u8> {
        let mut w = CheckpointWriter::new(LINREF_MAGIC, FORMAT_VERSION, meta);
        w.put_u64(self.delay as u64);
        w.put_u64(self.h_lin.nominal_delay() as u64);
        w.put_f64s(self.h_lin.taps());
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Metadata)> {
        let mut r = CheckpointReader::open(bytes, LINREF_MAGIC, FORMAT_VERSION)?;
        let delay = r.u64()? as usize;
        let nominal = r.u64()? as usize;
        let taps = r.f64s()?;
        let meta = std::mem::take(&mut r.meta);
        r.finish()?;
        let h_lin = FirFilter::new(taps, nominal).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((LinearReferenceModel { h_lin, delay }, meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &Metadata) -> Result<()> {
        std::fs::write(path, self.to_bytes(meta))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Metadata)> {
        LinearReferenceModel::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::tone_power;

    const FS: u32 = 44100;

    #[test]
    fn delta_kernel_is_identity() {
        let mut m = VolterraModel::zeros(4, 3).unwrap();
        m.h1_mut()[0] = 1.0;
        let u = Signal::sine(300, FS, 1000.0, 0.7, 0.2);
        assert_eq!(volterra_predict(&m, &u), u);
    }

    #[test]
    fn memoryless_square() {
        let mut m = VolterraModel::zeros(2, 2).unwrap();
        m.set_h2(0, 0, 0.1);
        let y = volterra_predict(&m, &Signal::new(vec![2.0; 5], FS).unwrap());
        assert!(y.samples().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn square_term_adds_dc_and_second_harmonic() {
        let mut m = VolterraModel::zeros(1, 1).unwrap();
        m.h1_mut()[0] = 1.0;
        m.set_h2(0, 0, 0.1);
        let u = Signal::sine(FS as usize, FS, 1000.0, 1.0, 0.0);
        let y = volterra_predict(&m, &u);
        let dc = y.samples().iter().sum::<f64>() / y.len() as f64;
        assert!((dc - 0.05).abs() < 1e-9);
        assert!(((2.0 * tone_power(&y, 1000.0, 0, FS as usize).unwrap()).sqrt() - 1.0).abs() < 1e-9);
        assert!(((2.0 * tone_power(&y, 2000.0, 0, FS as usize).unwrap()).sqrt() - 0.05).abs() < 1e-9);
    }

    #[test]
    fn packed_kernel_matches_direct_double_sum() {
        let (n1, n2) = (5, 4);
        let mut m = VolterraModel::zeros(n1, n2).unwrap();
        for i in 0..n1 {
            m.h1_mut()[i] = 0.1 * i as f64 - 0.2;
        }
        for i in 0..n2 {
            for j in i..n2 {
                m.set_h2(i, j, ((i * 7 + j * 3) % 5) as f64 * 0.03 - 0.05);
            }
        }
        assert_eq!(m.h2(1, 3), m.h2(3, 1));
        let u: Vec<f64> = (0..50).map(|n| ((n * 13 % 7) as f64 - 3.0) / 3.0).collect();
        let y = volterra_predict(&m, &Signal::new(u.clone(), FS).unwrap());
        let at = |k: isize| if k < 0 { 0.0 } else { u[k as usize] };
        for n in 0..50isize {
            let mut direct = 0.0;
            for i in 0..n1 {
                direct += m.h1()[i] * at(n - i as isize);
            }
            for i in 0..n2 {
                for j in i..n2 {
                    direct += m.h2(i, j) * at(n - i as isize) * at(n - j as isize);
                }
            }
            assert!((direct - y.samples()[n as usize]).abs() < 1e-12);
        }
    }

    #[test]
    fn output_is_exactly_quadratic_in_scale() {
        let mut m = VolterraModel::zeros(6, 5).unwrap();
        for i in 0..6 {
            m.h1_mut()[i] = (i as f64 * 0.7).sin();
        }
        for i in 0..5 {
            for j in i..5 {
                m.set_h2(i, j, ((i + 2 * j) as f64).cos() * 0.1);
            }
        }
        let u = Signal::from_fn(200, FS, |n| ((n as f64) * 0.37).sin()).unwrap();
        let lin = m.linear_part(u.samples());
        let quad = m.quadratic_part(u.samples());
        for a in [1.0, 2.0, 3.0] {
            let y = volterra_predict(&m, &u.scaled(a));
            for n in 0..200 {
                let model = a * lin[n] + a * a * quad[n];
                assert!((y.samples()[n] - model).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let mut m = VolterraModel::zeros(3, 2).unwrap();
        m.h1_mut().copy_from_slice(&[0.5, -0.25, 0.125]);
        m.set_h2(0, 1, 0.3);
        let mut meta = Metadata::new();
        meta.insert("align_lag".into(), "17".into());
        let bytes = m.to_bytes(&meta);
        let (back, meta2) = VolterraModel::from_bytes(&bytes).unwrap();
        assert_eq!((back.clone(), meta2.clone()), (m, meta));
        assert_eq!(back.to_bytes(&meta2), bytes);
        assert!(VolterraModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());

        let lr = LinearReferenceModel::new(FirFilter::delay(4, 0.5), 100);
        let b = lr.to_bytes(&Metadata::new());
        assert_eq!(LinearReferenceModel::from_bytes(&b).unwrap().0, lr);
        assert!(LinearReferenceModel::from_bytes(&bytes).is_err());
    }
}
