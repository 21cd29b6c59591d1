use serde::{Deserialize, Serialize};

use super::{diag_offset, LinearReferenceModel, NlmsConfig, VolterraModel};
use crate::dsp::{FirFilter, Signal};
use crate::error::{Error, Result};
use crate::metrics::nmse;

/// Kernel memories of a second-order Volterra model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolterraSizes {
    pub n1: usize,
    pub n2: usize,
}

impl Default for VolterraSizes {
    fn default() -> Self {
        VolterraSizes { n1: 160, n2: 80 }
    }
}

#[derive(Debug, Clone)]
pub struct NlmsReport {
    pub model: VolterraModel,
    /// Prediction NMSE of the final model over the adaptation data.
    pub nmse_db: f64,
    /// A-priori error energy of each pass.
    pub pass_error_energy: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LmsFirReport {
    pub model: LinearReferenceModel,
    pub nmse_db: f64,
    pub pass_error_energy: Vec<f64>,
}

const CHECK_BLOCK: usize = 16384;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn check_inputs(u: &Signal, y: &Signal, memory: usize) -> Result<()> {
    if u.len() != y.len() {
        return Err(Error::Shape(format!(
            "input has {} samples, output {}",
            u.len(),
            y.len()
        )));
    }
    if u.len() <= memory {
        return Err(Error::Signal(format!(
            "{} samples are too few for a memory of {memory}",
            u.len()
        )));
    }
    Ok(())
}

/// Tracks per-block error energy and flags divergence.
struct DivergenceGuard {
    block_err: f64,
    block_ref: f64,
    count: usize,
}

impl DivergenceGuard {
    fn new() -> Self {
        DivergenceGuard {
            block_err: 0.0,
            block_ref: 0.0,
            count: 0,
        }
    }

    fn push(&mut self, err: f64, reference: f64, at: usize, pass: usize) -> Result<()> {
        self.block_err += err * err;
        self.block_ref += reference * reference;
        self.count += 1;
        if self.count == CHECK_BLOCK {
            if !self.block_err.is_finite() || self.block_err > 10.0 * self.block_ref + 1e-300 {
                return Err(Error::Diverged(format!(
                    "pass {pass}, sample {at}: block error energy {:.3e} vs output energy {:.3e}",
                    self.block_err, self.block_ref
                )));
            }
            *self = DivergenceGuard::new();
        }
        Ok(())
    }
}

fn check_pass_growth(energies: &[f64]) -> Result<()> {
    if let [.., prev, last] = energies {
        if !last.is_finite() || *last > 10.0 * prev {
            return Err(Error::Diverged(format!(
                "error energy grew from {prev:.3e} to {last:.3e} over one pass"
            )));
        }
    }
    Ok(())
}

/// Joint NLMS over the concatenated linear and quadratic regressor, each
/// update normalized by `eps + ‖regressor‖²`.
pub fn nlms_identify(
    u: &Signal,
    y: &Signal,
    cfg: &NlmsConfig,
    sizes: VolterraSizes,
) -> Result<NlmsReport> {
    cfg.validate()?;
    let VolterraSizes { n1, n2 } = sizes;
    let mut model = VolterraModel::zeros(n1, n2)?;
    let memory = n1.max(n2);
    check_inputs(u, y, memory)?;
    let nq = n2 * (n2 + 1) / 2;
    let dim = n1 + nq;
    let (us, ys) = (u.samples(), y.samples());

    let mut coef = vec![0.0; dim];
    let mut reg = vec![0.0; dim];
    // newest-first window without wrap-around: every sample stored twice
    let mut hist = vec![0.0; 2 * memory];
    let mut energies = Vec::with_capacity(cfg.passes);

    for pass in 0..cfg.passes {
        hist.iter_mut().for_each(|h| *h = 0.0);
        let mut pos = 0usize;
        let mut guard = DivergenceGuard::new();
        let mut energy = 0.0;
        for n in 0..us.len() {
            pos = if pos == 0 { memory - 1 } else { pos - 1 };
            hist[pos] = us[n];
            hist[pos + memory] = us[n];
            let w = &hist[pos..pos + memory];

            reg[..n1].copy_from_slice(&w[..n1]);
            for delta in 0..n2 {
                let off = n1 + diag_offset(n2, delta);
                let len = n2 - delta;
                let dst = &mut reg[off..off + len];
                let (a, b) = (&w[..len], &w[delta..delta + len]);
                for i in 0..len {
                    dst[i] = a[i] * b[i];
                }
            }

            let e = ys[n] - dot(&coef, &reg);
            let g = cfg.step_mu * e / (cfg.regularization + dot(&reg, &reg));
            for (c, r) in coef.iter_mut().zip(&reg) {
                *c += g * r;
            }
            energy += e * e;
            guard.push(e, ys[n], n, pass)?;
        }
        energies.push(energy);
        check_pass_growth(&energies)?;
    }

    let (h1, h2) = model.coefficients_mut();
    h1.copy_from_slice(&coef[..n1]);
    h2.copy_from_slice(&coef[n1..]);
    let pred = super::volterra_predict(&model, u);
    let nmse_db = nmse(y, &pred, memory)?;
    Ok(NlmsReport {
        model,
        nmse_db,
        pass_error_energy: energies,
    })
}

/// NLMS-adapted FIR of `taps` coefficients. The returned reference model
/// carries `target_delay` for use as an inverse-training target.
pub fn lms_fir_identify(
    u: &Signal,
    y: &Signal,
    taps: usize,
    cfg: &NlmsConfig,
    target_delay: usize,
) -> Result<LmsFirReport> {
    cfg.validate()?;
    if taps == 0 {
        return Err(Error::Config("fir needs at least one tap".into()));
    }
    check_inputs(u, y, taps)?;
    let (us, ys) = (u.samples(), y.samples());
    let mut coef = vec![0.0; taps];
    let mut hist = vec![0.0; 2 * taps];
    let mut energies = Vec::with_capacity(cfg.passes);

    for pass in 0..cfg.passes {
        hist.iter_mut().for_each(|h| *h = 0.0);
        let mut pos = 0usize;
        let mut power = 0.0;
        let mut guard = DivergenceGuard::new();
        let mut energy = 0.0;
        for n in 0..us.len() {
            pos = if pos == 0 { taps - 1 } else { pos - 1 };
            // slot `pos` held the sample leaving the window
            let leaving = hist[pos];
            hist[pos] = us[n];
            hist[pos + taps] = us[n];
            power = (power + us[n] * us[n] - leaving * leaving).max(0.0);
            if n % CHECK_BLOCK == 0 {
                power = dot(&hist[pos..pos + taps], &hist[pos..pos + taps]);
            }
            let w = &hist[pos..pos + taps];
            let e = ys[n] - dot(&coef, w);
            let g = cfg.step_mu * e / (cfg.regularization + power);
            for (c, r) in coef.iter_mut().zip(w) {
                *c += g * r;
            }
            energy += e * e;
            guard.push(e, ys[n], n, pass)?;
        }
        energies.push(energy);
        check_pass_growth(&energies)?;
    }

    let h_lin = FirFilter::new(coef, 0)?;
    let pred = crate::dsp::fir_apply(u, &h_lin);
    let nmse_db = nmse(y, &pred, taps)?;
    let peak = LinearReferenceModel::new(h_lin.clone(), target_delay).peak_lag();
    let h_lin = FirFilter::new(h_lin.taps().to_vec(), peak)?;
    Ok(LmsFirReport {
        model: LinearReferenceModel::new(h_lin, target_delay),
        nmse_db,
        pass_error_energy: energies,
    })
}
