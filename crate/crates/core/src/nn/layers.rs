//! Dilated causal convolution, gated activation and their adjoints.

use super::gemm::{gemm_acc, gemm_nt};
use super::Tensor2;
use crate::error::{Error, Result};

const TILE: usize = 512;

/// `e^x` accurate to a few ulp, written branch-free so slices of it vectorize.
#[inline(always)]
pub fn exp_fast(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    // round-to-nearest through the mantissa; the low bits then hold k
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let x = x.clamp(-708.0, 708.0);
    let kd = x * std::f64::consts::LOG2_E + SHIFTER;
    let kbits = kd.to_bits();
    let k = kd - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series to r^12 on |r| <= ln2/2
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let bits = kbits.wrapping_add(1023) << 52;
    p * f64::from_bits(bits)
}

#[inline(always)]
pub fn tanh_fast(x: f64) -> f64 {
    1.0 - 2.0 / (exp_fast(2.0 * x) + 1.0)
}

#[inline(always)]
pub fn sigmoid_fast(x: f64) -> f64 {
    1.0 / (1.0 + exp_fast(-x))
}

/// Causal convolution weights `[out × in × kernel]` with per-output bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvShape {
    pub fn pointwise(out_ch: usize, in_ch: usize) -> Self {
        ConvShape {
            out_ch,
            in_ch,
            kernel: 1,
            dilation: 1,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel
    }

    fn check(&self, x: &Tensor2, w: &[f64], b: Option<&[f64]>) -> Result<()> {
        if x.channels() != self.in_ch {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_ch,
                x.channels()
            )));
        }
        if w.len() != self.weight_len() || b.is_some_and(|b| b.len() != self.out_ch) {
            return Err(Error::Shape("conv weight/bias size mismatch".into()));
        }
        if self.kernel == 0 || self.dilation == 0 {
            return Err(Error::Shape("conv kernel and dilation must be positive".into()));
        }
        Ok(())
    }
}

/// Reusable buffers for [`conv_backward`].
#[derive(Debug, Default)]
pub struct ConvScratch {
    xpad: Vec<f64>,
    dypad: Vec<f64>,
    wt: Vec<f64>,
}

/// Rows of `x` left-padded with `pad` zeros into `buf`; returns the row stride.
fn left_padded(x: &Tensor2, pad: usize, buf: &mut Vec<f64>) -> usize {
    let t = x.time();
    let stride = t + pad;
    buf.clear();
    buf.resize(x.channels() * stride, 0.0);
    for c in 0..x.channels() {
        buf[c * stride + pad..(c + 1) * stride].copy_from_slice(x.row(c));
    }
    stride
}

/// The `in·kernel` shifted input rows `x[i][t − k·d]`, each of length `time`.
fn shifted_rows<'a>(buf: &'a [f64], stride: usize, pad: usize, shape: ConvShape, time: usize) -> Vec<&'a [f64]> {
    let mut rows = Vec::with_capacity(shape.in_ch * shape.kernel);
    for i in 0..shape.in_ch {
        for k in 0..shape.kernel {
            let start = i * stride + pad - k * shape.dilation;
            rows.push(&buf[start..start + time]);
        }
    }
    rows
}

fn tiles(len: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..len).step_by(TILE).map(move |t0| (t0, (t0 + TILE).min(len)))
}

/// `y[o][t] = b[o] + Σ_i Σ_k w[o][i][k]·x[i][t − k·dilation]`, zero left padding.
pub fn dilated_causal_conv(
    x: &Tensor2,
    w: &[f64],
    b: Option<&[f64]>,
    shape: ConvShape,
) -> Result<Tensor2> {
    shape.check(x, w, b)?;
    let mut y = Tensor2::zeros(shape.out_ch, x.time());
    conv_forward_into(x, w, b, shape, &mut y, &mut Vec::new());
    Ok(y)
}

pub(crate) fn conv_forward_into(
    x: &Tensor2,
    w: &[f64],
    b: Option<&[f64]>,
    shape: ConvShape,
    y: &mut Tensor2,
    pad_buf: &mut Vec<f64>,
) {
    let t_len = x.time();
    y.reshape(shape.out_ch, t_len);
    for o in 0..shape.out_ch {
        let bias = b.map_or(0.0, |b| b[o]);
        y.row_mut(o).iter_mut().for_each(|v| *v = bias);
    }
    let pad = (shape.kernel - 1) * shape.dilation;
    let (buf, stride) = if pad == 0 {
        (x.data(), t_len)
    } else {
        let stride = left_padded(x, pad, pad_buf);
        (pad_buf.as_slice(), stride)
    };
    let rows = shifted_rows(buf, stride, pad, shape, t_len);
    let mut out: Vec<&mut [f64]> = y.data_mut().chunks_mut(t_len).collect();
    for (t0, t1) in tiles(t_len) {
        let sub: Vec<&[f64]> = rows.iter().map(|r| &r[t0..t1]).collect();
        let mut dst: Vec<&mut [f64]> = out.iter_mut().map(|r| &mut r[t0..t1]).collect();
        gemm_acc(&mut dst, w, &sub, t1 - t0);
    }
}

/// Adjoint of [`dilated_causal_conv`]: accumulates weight and bias gradients
/// (unless `grad_w` is `None`) and adds `dL/dx` into `dx` when given.
pub(crate) fn conv_backward(
    x: &Tensor2,
    w: &[f64],
    shape: ConvShape,
    dy: &Tensor2,
    grad_w: Option<(&mut [f64], Option<&mut [f64]>)>,
    dx: Option<&mut Tensor2>,
    scratch: &mut ConvScratch,
) {
    let t_len = x.time();
    let ConvShape {
        out_ch,
        in_ch,
        kernel,
        dilation,
    } = shape;
    let pad = (kernel - 1) * dilation;
    let dy_rows: Vec<&[f64]> = dy.data().chunks(t_len).collect();
    if let Some((gw, gb)) = grad_w {
        if let Some(gb) = gb {
            for o in 0..out_ch {
                gb[o] += dy_rows[o].iter().sum::<f64>();
            }
        }
        let (buf, stride) = if pad == 0 {
            (x.data(), t_len)
        } else {
            let stride = left_padded(x, pad, &mut scratch.xpad);
            (scratch.xpad.as_slice(), stride)
        };
        let rows = shifted_rows(buf, stride, pad, shape, t_len);
        for (t0, t1) in tiles(t_len) {
            let a: Vec<&[f64]> = dy_rows.iter().map(|r| &r[t0..t1]).collect();
            let b: Vec<&[f64]> = rows.iter().map(|r| &r[t0..t1]).collect();
            gemm_nt(gw, &a, &b, t1 - t0);
        }
    }
    if let Some(dx) = dx {
        // dx[i][s] = Σ_{o,k} w[o][i][k]·dy[o][s + k·d], dy zero past the end
        let (buf, stride) = if pad == 0 {
            (dy.data(), t_len)
        } else {
            let stride = t_len + pad;
            let dyp = &mut scratch.dypad;
            dyp.clear();
            dyp.resize(out_ch * stride, 0.0);
            for o in 0..out_ch {
                dyp[o * stride..o * stride + t_len].copy_from_slice(dy_rows[o]);
            }
            (scratch.dypad.as_slice(), stride)
        };
        let mut rows = Vec::with_capacity(out_ch * kernel);
        for o in 0..out_ch {
            for k in 0..kernel {
                let start = o * stride + k * dilation;
                rows.push(&buf[start..start + t_len]);
            }
        }
        let wt = &mut scratch.wt;
        wt.clear();
        wt.resize(in_ch * out_ch * kernel, 0.0);
        for o in 0..out_ch {
            for i in 0..in_ch {
                for k in 0..kernel {
                    wt[i * out_ch * kernel + o * kernel + k] = w[(o * in_ch + i) * kernel + k];
                }
            }
        }
        let mut out: Vec<&mut [f64]> = dx.data_mut().chunks_mut(t_len).collect();
        for (t0, t1) in tiles(t_len) {
            let sub: Vec<&[f64]> = rows.iter().map(|r| &r[t0..t1]).collect();
            let mut dst: Vec<&mut [f64]> = out.iter_mut().map(|r| &mut r[t0..t1]).collect();
            gemm_acc(&mut dst, wt, &sub, t1 - t0);
        }
    }
}

/// Gradients of [`dilated_causal_conv`] for upstream `dy`: `(dw, db, dx)`.
pub fn dilated_causal_conv_backward(
    x: &Tensor2,
    w: &[f64],
    shape: ConvShape,
    dy: &Tensor2,
) -> Result<(Vec<f64>, Vec<f64>, Tensor2)> {
    shape.check(x, w, None)?;
    if dy.channels() != shape.out_ch || dy.time() != x.time() {
        return Err(Error::Shape("conv upstream gradient shape mismatch".into()));
    }
    let mut dw = vec![0.0; shape.weight_len()];
    let mut db = vec![0.0; shape.out_ch];
    let mut dx = Tensor2::zeros(shape.in_ch, x.time());
    conv_backward(
        x,
        w,
        shape,
        dy,
        Some((&mut dw, Some(&mut db))),
        Some(&mut dx),
        &mut ConvScratch::default(),
    );
    Ok((dw, db, dx))
}

/// Splits `2C` channels into `(a, b)` halves and returns `tanh(a)·σ(b)`.
pub fn gated_activation(x: &Tensor2) -> Result<Tensor2> {
    let (g, _, _) = gated_forward(x)?;
    Ok(g)
}

/// Gated output together with the cached `tanh(a)` and `σ(b)`.
pub(crate) fn gated_forward(x: &Tensor2) -> Result<(Tensor2, Tensor2, Tensor2)> {
    if x.channels() % 2 != 0 {
        return Err(Error::Shape(format!(
            "gated activation needs an even channel count, got {}",
            x.channels()
        )));
    }
    let (mut g, mut ta, mut sb) = Default::default();
    gated_forward_into(x, &mut g, &mut ta, &mut sb);
    Ok((g, ta, sb))
}

pub(crate) fn gated_forward_into(x: &Tensor2, g: &mut Tensor2, ta: &mut Tensor2, sb: &mut Tensor2) {
    let c = x.channels() / 2;
    let t = x.time();
    g.reshape(c, t);
    ta.reshape(c, t);
    sb.reshape(c, t);
    let n = c * t;
    let (a, b) = x.data().split_at(n);
    ta.data_mut().iter_mut().zip(a).for_each(|(o, &v)| *o = tanh_fast(v));
    sb.data_mut().iter_mut().zip(b).for_each(|(o, &v)| *o = sigmoid_fast(v));
    g.data_mut()
        .iter_mut()
        .zip(ta.data().iter().zip(sb.data()))
        .for_each(|(o, (p, q))| *o = p * q);
}

/// Gradient of [`gated_activation`] with respect to its `2C`-channel input.
pub fn gated_activation_backward(x: &Tensor2, dg: &Tensor2) -> Result<Tensor2> {
    let (_, ta, sb) = gated_forward(x)?;
    if dg.channels() != ta.channels() || dg.time() != ta.time() {
        return Err(Error::Shape("gated upstream gradient shape mismatch".into()));
    }
    let mut out = Tensor2::default();
    gated_backward_into(&ta, &sb, dg, &mut out);
    Ok(out)
}

/// Gradient with respect to the `2C`-channel pre-activation.
pub(crate) fn gated_backward_into(ta: &Tensor2, sb: &Tensor2, dg: &Tensor2, out: &mut Tensor2) {
    let n = ta.data().len();
    out.reshape(2 * ta.channels(), ta.time());
    let (da, db) = out.data_mut().split_at_mut(n);
    let (t, s, g) = (ta.data(), sb.data(), dg.data());
    for i in 0..n {
        da[i] = g[i] * s[i] * (1.0 - t[i] * t[i]);
        db[i] = g[i] * t[i] * s[i] * (1.0 - s[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(ch: usize, t: usize, seed: u64) -> Tensor2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor2::new(ch, t, (0..ch * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rvec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn fast_math_matches_std() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.01;
            assert!((exp_fast(x) / x.exp() - 1.0).abs() < 4e-15, "{x}");
            assert!((tanh_fast(x) - x.tanh()).abs() < 4e-16);
            assert!((sigmoid_fast(x) - 1.0 / (1.0 + (-x).exp())).abs() < 4e-16);
        }
        assert!(exp_fast(-1000.0) >= 0.0 && exp_fast(1000.0).is_finite());
        assert_eq!(tanh_fast(50.0), 1.0);
        assert_eq!(tanh_fast(-50.0), -1.0);
    }

    #[test]
    fn pointwise_is_matrix_multiply() {
        let x = random(5, 300, 1);
        let w = rvec(3 * 5, 2);
        let b = rvec(3, 3);
        let y = dilated_causal_conv(&x, &w, Some(&b), ConvShape::pointwise(3, 5)).unwrap();
        for o in 0..3 {
            for t in 0..300 {
                let r: f64 = b[o] + (0..5).map(|i| w[o * 5 + i] * x.row(i)[t]).sum::<f64>();
                assert!((y.row(o)[t] - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_weights_pass_through() {
        let x = random(3, 50, 4);
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let y = dilated_causal_conv(&x, &w, None, ConvShape::pointwise(3, 3)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dilated_impulse() {
        let mut row = vec![0.0; 16];
        row[0] = 1.0;
        let x = Tensor2::from_row(&row);
        let shape = ConvShape {
            out_ch: 1,
            in_ch: 1,
            kernel: 2,
            dilation: 4,
        };
        let y = dilated_causal_conv(&x, &[1.0, 1.0], None, shape).unwrap();
        let nz: Vec<usize> = (0..16).filter(|&t| y.row(0)[t] != 0.0).collect();
        assert_eq!(nz, vec![0, 4]);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = random(2, 10, 5);
        let shape = ConvShape::pointwise(3, 3);
        assert!(dilated_causal_conv(&x, &[0.0; 9], None, shape).is_err());
        assert!(dilated_causal_conv(&x, &[0.0; 5], None, ConvShape::pointwise(3, 2)).is_err());
    }

    #[test]
    fn gated_values() {
        let x = Tensor2::new(2, 3, vec![0.0, 1.0, 40.0, 0.0, 0.0, 40.0]).unwrap();
        let g = gated_activation(&x).unwrap();
        assert_eq!(g.row(0)[0], 0.0);
        assert!((g.row(0)[1] - 0.380_797_077_977_882_3).abs() < 1e-15);
        assert!((g.row(0)[2] - 1.0).abs() < 1e-15);
        assert!(gated_activation(&random(3, 4, 1)).is_err());
    }

    fn fd_check(f: impl Fn(&[f64]) -> f64, p: &[f64], g: &[f64]) {
        let h = 1e-5;
        for i in 0..p.len() {
            let mut q = p.to_vec();
            q[i] += h;
            let up = f(&q);
            q[i] -= 2.0 * h;
            let down = f(&q);
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let shape = ConvShape {
            out_ch: 3,
            in_ch: 2,
            kernel: 3,
            dilation: 5,
        };
        let x = random(2, 4100, 6);
        let w = rvec(shape.weight_len(), 7);
        let b = rvec(3, 8);
        let probe = random(3, 4100, 9);
        let loss = |x: &Tensor2, w: &[f64], b: &[f64]| {
            let y = dilated_causal_conv(x, w, Some(b), shape).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, c)| a * c).sum::<f64>()
        };
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; 3];
        let mut dx = Tensor2::zeros(2, 4100);
        conv_backward(&x, &w, shape, &probe, Some((&mut gw, Some(&mut gb))), Some(&mut dx), &mut ConvScratch::default());
        fd_check(|p| loss(&x, p, &b), &w, &gw);
        fd_check(|p| loss(&x, &w, p), &b, &gb);
        let xs: Vec<f64> = x.data()[4080..4100].to_vec();
        let f = |p: &[f64]| {
            let mut x2 = x.clone();
            x2.data_mut()[4080..4100].copy_from_slice(p);
            loss(&x2, &w, &b)
        };
        fd_check(f, &xs, &dx.data()[4080..4100]);
        let f0 = |p: &[f64]| {
            let mut x2 = x.clone();
            x2.data_mut()[..20].copy_from_slice(p);
            loss(&x2, &w, &b)
        };
        fd_check(f0, &x.data()[..20], &dx.data()[..20]);
    }

    #[test]
    fn gate_gradients_match_finite_differences() {
        let x = random(4, 30, 10);
        let probe = random(2, 30, 11);
        let (_, ta, sb) = gated_forward(&x).unwrap();
        let mut d = Tensor2::default();
        gated_backward_into(&ta, &sb, &probe, &mut d);
        let f = |p: &[f64]| {
            let g = gated_activation(&Tensor2::new(4, 30, p.to_vec()).unwrap()).unwrap();
            g.data().iter().zip(probe.data()).map(|(a, c)| a * c).sum::<f64>()
        };
        fd_check(f, x.data(), d.data());
    }
}
