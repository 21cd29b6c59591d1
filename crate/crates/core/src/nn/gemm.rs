//! Register-blocked kernels behind the convolutions.

const LANES: usize = 8;

/// `out[o][t] += Σ_r w[o·R + r]·rows[r][t]` for `t < len`.
pub(crate) fn gemm_acc(out: &mut [&mut [f64]], w: &[f64], rows: &[&[f64]], len: usize) {
    let r_count = rows.len();
    debug_assert_eq!(w.len(), out.len() * r_count);
    let mut o = 0;
    while o + 8 <= out.len() {
        block::<8>(&mut out[o..o + 8], &columns::<8>(w, o, r_count), rows, len);
        o += 8;
    }
    while o + 4 <= out.len() {
        block::<4>(&mut out[o..o + 4], &columns::<4>(w, o, r_count), rows, len);
        o += 4;
    }
    while o < out.len() {
        block::<1>(&mut out[o..o + 1], &columns::<1>(w, o, r_count), rows, len);
        o += 1;
    }
}

/// Weights of output rows `o0..o0+OB`, one array per input row.
fn columns<const OB: usize>(w: &[f64], o0: usize, r_count: usize) -> Vec<[f64; OB]> {
    (0..r_count)
        .map(|r| std::array::from_fn(|o| w[(o0 + o) * r_count + r]))
        .collect()
}

#[inline(always)]
fn block<const OB: usize>(out: &mut [&mut [f64]], cols: &[[f64; OB]], rows: &[&[f64]], len: usize) {
    let full = len / LANES * LANES;
    let mut t = 0;
    while t < full {
        let mut acc = [[0.0f64; LANES]; OB];
        for (row, wv) in rows.iter().zip(cols) {
            let x: [f64; LANES] = row[t..t + LANES].try_into().unwrap();
            for o in 0..OB {
                for l in 0..LANES {
                    acc[o][l] += wv[o] * x[l];
                }
            }
        }
        for o in 0..OB {
            let dst = &mut out[o][t..t + LANES];
            for l in 0..LANES {
                dst[l] += acc[o][l];
            }
        }
        t += LANES;
    }
    for t in full..len {
        for o in 0..OB {
            let mut s = 0.0;
            for (row, wv) in rows.iter().zip(cols) {
                s += wv[o] * row[t];
            }
            out[o][t] += s;
        }
    }
}

/// `g[a·B + b] += Σ_t a_rows[a][t]·b_rows[b][t]` for `t < len`.
pub(crate) fn gemm_nt(g: &mut [f64], a_rows: &[&[f64]], b_rows: &[&[f64]], len: usize) {
    let nb = b_rows.len();
    debug_assert_eq!(g.len(), a_rows.len() * nb);
    let mut a = 0;
    while a < a_rows.len() {
        let ab = (a_rows.len() - a).min(4);
        let mut b = 0;
        while b < nb {
            let bb = (nb - b).min(4);
            if ab == 4 && bb == 4 {
                dots::<4, 4>(g, nb, a, b, a_rows, b_rows, len);
            } else {
                for i in 0..ab {
                    for j in 0..bb {
                        g[(a + i) * nb + b + j] += dot(&a_rows[a + i][..len], &b_rows[b + j][..len]);
                    }
                }
            }
            b += bb;
        }
        a += ab;
    }
}

const NT_LANES: usize = 4;

#[inline(always)]
fn dots<const AB: usize, const BB: usize>(
    g: &mut [f64],
    nb: usize,
    a0: usize,
    b0: usize,
    a_rows: &[&[f64]],
    b_rows: &[&[f64]],
    len: usize,
) {
    let full = len / NT_LANES * NT_LANES;
    let mut acc = [[[0.0f64; NT_LANES]; BB]; AB];
    let ar: [&[f64]; AB] = std::array::from_fn(|i| &a_rows[a0 + i][..len]);
    let br: [&[f64]; BB] = std::array::from_fn(|j| &b_rows[b0 + j][..len]);
    for c in 0..full / NT_LANES {
        let t = c * NT_LANES;
        let mut av = [[0.0; NT_LANES]; AB];
        let mut bv = [[0.0; NT_LANES]; BB];
        for i in 0..AB {
            av[i].copy_from_slice(&ar[i][t..t + NT_LANES]);
        }
        for j in 0..BB {
            bv[j].copy_from_slice(&br[j][t..t + NT_LANES]);
        }
        for i in 0..AB {
            for j in 0..BB {
                for l in 0..NT_LANES {
                    acc[i][j][l] += av[i][l] * bv[j][l];
                }
            }
        }
    }
    for i in 0..AB {
        for j in 0..BB {
            let v = &acc[i][j];
            let mut s = (v[0] + v[1]) + (v[2] + v[3]);
            for t in full..len {
                s += ar[i][t] * br[j][t];
            }
            g[(a0 + i) * nb + b0 + j] += s;
        }
    }
}

#[inline(always)]
fn reduce(v: &[f64; LANES]) -> f64 {
    ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let full = a.len() / LANES * LANES;
    let mut acc = [0.0; LANES];
    let mut t = 0;
    while t < full {
        for l in 0..LANES {
            acc[l] += a[t + l] * b[t + l];
        }
        t += LANES;
    }
    let mut s = reduce(&acc);
    for t in full..a.len() {
        s += a[t] * b[t];
    }
    s
}
