use log::warn;
use nalgebra::{DMatrix, DVector};

use super::{LinearReferenceModel, VolterraModel};
use crate::dsp::{convolve_causal, fir_apply, FirFilter, Signal};
use crate::error::{Error, Result};

/// Least-squares delayed inverse of a linear kernel.
#[derive(Debug, Clone)]
pub struct DelayedInverse {
    pub filter: FirFilter,
    /// `‖L∗h1 − δ_D‖²`.
    pub residual: f64,
    /// True when the normal equations needed ridge loading.
    pub regularized: bool,
}

const RIDGE: f64 = 1e-8;
const MAX_CONDITION: f64 = 1e12;

/// Solves the Toeplitz normal equations for the FIR `L` of `length` taps
/// minimizing `‖(L ∗ h1) − δ_D‖²`.
pub fn design_delayed_inverse(h1: &[f64], delay: usize, length: usize) -> Result<DelayedInverse> {
    if length == 0 {
        return Err(Error::Config("inverse filter needs at least one tap".into()));
    }
    if h1.is_empty() || h1.iter().all(|&v| v == 0.0) {
        return Err(Error::Signal("cannot invert an all-zero kernel".into()));
    }
    let r: Vec<f64> = (0..length)
        .map(|lag| {
            if lag >= h1.len() {
                return 0.0;
            }
            h1[lag..].iter().zip(h1).map(|(a, b)| a * b).sum()
        })
        .collect();
    let rhs = DVector::from_fn(length, |i, _| {
        delay.checked_sub(i).and_then(|k| h1.get(k)).copied().unwrap_or(0.0)
    });
    let gram = DMatrix::from_fn(length, length, |i, j| r[i.abs_diff(j)]);

    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let plain = if lo > 0.0 && hi / lo <= MAX_CONDITION { gram.clone().cholesky() } else { None };
    let (taps, regularized) = match plain {
        Some(c) => (c.solve(&rhs), false),
        None => {
            warn!("delayed inverse normal equations are ill-conditioned, adding ridge {RIDGE:e}");
            let loaded = gram + DMatrix::identity(length, length) * (RIDGE * r[0]);
            let c = loaded
                .cholesky()
                .ok_or_else(|| Error::NonFinite("ridge-loaded normal equations not positive definite".into()))?;
            (c.solve(&rhs), true)
        }
    };
    let taps: Vec<f64> = taps.iter().copied().collect();
    let conv = convolve_full(&taps, h1);
    let residual = conv
        .iter()
        .enumerate()
        .map(|(n, v)| if n == delay { (v - 1.0).powi(2) } else { v * v })
        .sum::<f64>()
        + if delay >= conv.len() { 1.0 } else { 0.0 };
    Ok(DelayedInverse {
        filter: FirFilter::new(taps, delay)?,
        residual,
        regularized,
    })
}

fn convolve_full(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Pre-inverse of order `p` built by fixed-point iteration:
/// `a_1 = u`, `a_k = δ_{(k-1)D} u − L(H2(a_{k-1}))`.
///
/// Each stage keeps the plant's own linear response and cancels the
/// quadratic part of the previous stage through the delayed linear inverse
/// `L`, so the result is an approximate inverse up to the plant's linear
/// part with a total delay of `(p-1)·D`. The output is clamped to `[-1, 1]`.
pub fn pth_order_inverse(
    model: &VolterraModel,
    u: &Signal,
    p: usize,
    inverse: &FirFilter,
    delay: usize,
) -> Result<Signal> {
    if !(2..=3).contains(&p) {
        return Err(Error::Config(format!("inverse order {p} not in {{2, 3}}")));
    }
    let x = u.samples();
    let mut stage = x.to_vec();
    for k in 2..=p {
        let correction = convolve_causal(&model.quadratic_part(&stage), inverse.taps());
        let shift = (k - 1) * delay;
        stage = (0..x.len())
            .map(|n| {
                let aligned = if n >= shift { x[n - shift] } else { 0.0 };
                aligned - correction[n]
            })
            .collect();
    }
    Signal::new(stage, u.sample_rate()).map(|s| s.clamped(1.0))
}

/// Inverse-training target: `delay_D(h_lin ∗ u)`.
pub fn linear_reference(u: &Signal, reference: &LinearReferenceModel) -> Signal {
    fir_apply(u, &reference.h_lin).delayed(reference.delay)
}

/// Identified Volterra model bundled with its delayed linear inverse.
#[derive(Debug, Clone)]
pub struct VolterraCompensator {
    pub model: VolterraModel,
    pub inverse: DelayedInverse,
    pub delay: usize,
}

impl VolterraCompensator {
    pub fn new(model: VolterraModel, delay: usize, inverse_length: usize) -> Result<Self> {
        let inverse = design_delayed_inverse(model.h1(), delay, inverse_length)?;
        if inverse.regularized {
            warn!("volterra compensator uses a ridge-regularized linear inverse");
        }
        Ok(VolterraCompensator {
            model,
            inverse,
            delay,
        })
    }

    /// Latency added by the order-`p` preprocessor.
    pub fn latency(&self, p: usize) -> usize {
        p.saturating_sub(1) * self.delay
    }

    pub fn preprocess(&self, u: &Signal, p: usize) -> Result<Signal> {
        pth_order_inverse(&self.model, u, p, &self.inverse.filter, self.delay)
    }
}
