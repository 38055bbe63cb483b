//! Chunked forward/tangent kernel for the transport hot path.
//!
//! Evaluates the field (and optionally its state Jacobians) for a block of
//! points sharing one time value. States are held column-major over points
//! (`buf[i * b + j]` = unit `i` of point `j`), so the innermost loops run
//! over points and vectorize.
//!
//! Every output element is accumulated by a fixed-order sequential sum
//! over the reduction index, so results are bit-identical regardless of
//! how points are grouped into chunks. The transport relies on this: a
//! batch push, a single-point push, and a manual composition of single
//! steps all produce the same floats.

use super::forward::{mish, mish_parts, time_features};
use super::VelocityParams;

/// Preallocated buffers for one chunk of at most `cap` points.
pub struct ChunkScratch {
    cap: usize,
    d: usize,
    w: usize,
    // value-path buffers, w x b
    h: Vec<f64>,
    u: Vec<f64>,
    z: Vec<f64>,
    xn: Vec<f64>,
    md: Vec<f64>,
    h2: Vec<f64>,
    // per-column stats, length b
    mu: Vec<f64>,
    inv_s: Vec<f64>,
    dmu: Vec<f64>,
    proj: Vec<f64>,
    // tangents: d blocks of w x b, plus the residual entry copies
    t: Vec<f64>,
    tin: Vec<f64>,
    tscratch: Vec<f64>,
    // time embedding W_t * phi(t) + b_t + b_x, length w
    emb: Vec<f64>,
    /// field values, d x b (row i = output coordinate i)
    pub val: Vec<f64>,
    /// Jacobians, per point j: jac[j * d * d + i * d + r] = dv_i/dx_r
    pub jac: Vec<f64>,
}

impl ChunkScratch {
    pub fn new(p: &VelocityParams, cap: usize) -> Self {
        let (d, w) = (p.shape.d, p.shape.width);
        let wb = w * cap;
        Self {
            cap,
            d,
            w,
            h: vec![0.0; wb],
            u: vec![0.0; wb],
            z: vec![0.0; wb],
            xn: vec![0.0; wb],
            md: vec![0.0; wb],
            h2: vec![0.0; wb],
            mu: vec![0.0; cap],
            inv_s: vec![0.0; cap],
            dmu: vec![0.0; cap],
            proj: vec![0.0; cap],
            t: vec![0.0; d * wb],
            tin: vec![0.0; d * wb],
            tscratch: vec![0.0; wb],
            emb: vec![0.0; w],
            val: vec![0.0; d * cap],
            jac: vec![0.0; d * d * cap],
        }
    }
}

/// `out[i*b + j] = sum_k a[i*w_in + k] * inp[k*b + j]`, k-sequential.
#[inline]
fn matmul_cols(out: &mut [f64], a: &[f64], inp: &[f64], rows: usize, inner: usize, b: usize) {
    for i in 0..rows {
        let arow = &a[i * inner..(i + 1) * inner];
        let orow = &mut out[i * b..i * b + b];
        orow.fill(0.0);
        for (k, &aik) in arow.iter().enumerate() {
            let irow = &inp[k * b..k * b + b];
            for j in 0..b {
                orow[j] += aik * irow[j];
            }
        }
    }
}

/// Per-column layer norm: fills `u = gain*xn + off`, recording `xn` and
/// `inv_s` for the tangent rule.
#[allow(clippy::too_many_arguments)]
fn ln_value(
    h: &[f64],
    gain: &[f64],
    off: &[f64],
    w: usize,
    b: usize,
    mu: &mut [f64],
    inv_s: &mut [f64],
    xn: &mut [f64],
    u: &mut [f64],
) {
    let wf = w as f64;
    mu[..b].fill(0.0);
    for i in 0..w {
        let row = &h[i * b..i * b + b];
        for j in 0..b {
            mu[j] += row[j];
        }
    }
    for j in 0..b {
        mu[j] /= wf;
    }
    inv_s[..b].fill(0.0);
    for i in 0..w {
        let row = &h[i * b..i * b + b];
        for j in 0..b {
            let c = row[j] - mu[j];
            inv_s[j] += c * c;
        }
    }
    for j in 0..b {
        inv_s[j] = 1.0 / (inv_s[j] / wf + super::LN_EPS).sqrt();
    }
    for i in 0..w {
        let hrow = &h[i * b..i * b + b];
        let xrow = &mut xn[i * b..i * b + b];
        let urow = &mut u[i * b..i * b + b];
        let (g, o) = (gain[i], off[i]);
        for j in 0..b {
            let z = (hrow[j] - mu[j]) * inv_s[j];
            xrow[j] = z;
            urow[j] = g * z + o;
        }
    }
}

/// Tangent of the layer norm applied in place to one direction block:
/// `t <- gain * inv_s * (t - dmu - xn * proj)` with `dmu = mean_i t`,
/// `proj = mean_i xn*(t - dmu)`.
fn ln_tangent_block(
    t: &mut [f64],
    xn: &[f64],
    inv_s: &[f64],
    gain: &[f64],
    w: usize,
    b: usize,
    dmu: &mut [f64],
    proj: &mut [f64],
) {
    let wf = w as f64;
    dmu[..b].fill(0.0);
    for i in 0..w {
        let row = &t[i * b..i * b + b];
        for j in 0..b {
            dmu[j] += row[j];
        }
    }
    for j in 0..b {
        dmu[j] /= wf;
    }
    proj[..b].fill(0.0);
    for i in 0..w {
        let trow = &t[i * b..i * b + b];
        let xrow = &xn[i * b..i * b + b];
        for j in 0..b {
            proj[j] += xrow[j] * (trow[j] - dmu[j]);
        }
    }
    for j in 0..b {
        proj[j] /= wf;
    }
    for i in 0..w {
        let trow = &mut t[i * b..i * b + b];
        let xrow = &xn[i * b..i * b + b];
        let g = gain[i];
        for j in 0..b {
            trow[j] = g * inv_s[j] * (trow[j] - dmu[j] - xrow[j] * proj[j]);
        }
    }
}

/// Evaluates the field for `b` points at one shared time, filling
/// `s.val` (and `s.jac` when `want_jacobian`).
///
/// `xs` is row-major `b x d` (the transport's state layout).
pub fn eval_chunk(
    p: &VelocityParams,
    xs: &[f64],
    t: f64,
    b: usize,
    want_jacobian: bool,
    s: &mut ChunkScratch,
) {
    assert!(b <= s.cap && xs.len() == b * s.d);
    let (d, w) = (s.d, s.w);
    let ten = &p.tensors;
    let wb = w * b;

    // shared embedding constant: W_t phi(t) + b_t + b_x
    let phi = time_features(t, p.shape.k_freqs);
    for i in 0..w {
        let mut acc = ten.b_x[i] + ten.b_t[i];
        let wt_row = ten.w_t.row(i);
        for (k, &ph) in phi.iter().enumerate() {
            acc += wt_row[k] * ph;
        }
        s.emb[i] = acc;
    }

    // h = W_x x + emb
    let wx = ten.w_x.as_slice().expect("contiguous");
    for i in 0..w {
        let arow = &wx[i * d..(i + 1) * d];
        let hrow = &mut s.h[i * b..i * b + b];
        let e = s.emb[i];
        hrow.fill(e);
        for (k, &aik) in arow.iter().enumerate() {
            for j in 0..b {
                hrow[j] += aik * xs[j * d + k];
            }
        }
    }
    if want_jacobian {
        for r in 0..d {
            let tr = &mut s.t[r * wb..(r + 1) * wb];
            for i in 0..w {
                tr[i * b..i * b + b].fill(wx[i * d + r]);
            }
        }
    }

    for blk in &ten.blocks {
        if want_jacobian {
            s.tin[..d * wb].copy_from_slice(&s.t[..d * wb]);
        }
        // LN1 + mish
        ln_value(
            &s.h,
            blk.ln1_gain.as_slice().unwrap(),
            blk.ln1_off.as_slice().unwrap(),
            w,
            b,
            &mut s.mu,
            &mut s.inv_s,
            &mut s.xn,
            &mut s.u,
        );
        if want_jacobian {
            for idx in 0..wb {
                let (zv, md) = mish_parts(s.u[idx]);
                s.z[idx] = zv;
                s.md[idx] = md;
            }
            for r in 0..d {
                let tr = &mut s.t[r * wb..(r + 1) * wb];
                ln_tangent_block(
                    tr,
                    &s.xn,
                    &s.inv_s,
                    blk.ln1_gain.as_slice().unwrap(),
                    w,
                    b,
                    &mut s.dmu,
                    &mut s.proj,
                );
                for idx in 0..wb {
                    tr[idx] *= s.md[idx];
                }
            }
        } else {
            for idx in 0..wb {
                s.z[idx] = mish(s.u[idx]);
            }
        }
        // A1
        let a1 = blk.a1.as_slice().unwrap();
        matmul_cols(&mut s.h2, a1, &s.z, w, w, b);
        for i in 0..w {
            let bias = blk.b1[i];
            for v in &mut s.h2[i * b..i * b + b] {
                *v += bias;
            }
        }
        if want_jacobian {
            for r in 0..d {
                let tr = &mut s.t[r * wb..(r + 1) * wb];
                s.tscratch[..wb].copy_from_slice(tr);
                matmul_cols(tr, a1, &s.tscratch[..wb], w, w, b);
            }
        }
        // LN2 + mish
        ln_value(
            &s.h2,
            blk.ln2_gain.as_slice().unwrap(),
            blk.ln2_off.as_slice().unwrap(),
            w,
            b,
            &mut s.mu,
            &mut s.inv_s,
            &mut s.xn,
            &mut s.u,
        );
        if want_jacobian {
            for idx in 0..wb {
                let (zv, md) = mish_parts(s.u[idx]);
                s.z[idx] = zv;
                s.md[idx] = md;
            }
            for r in 0..d {
                let tr = &mut s.t[r * wb..(r + 1) * wb];
                ln_tangent_block(
                    tr,
                    &s.xn,
                    &s.inv_s,
                    blk.ln2_gain.as_slice().unwrap(),
                    w,
                    b,
                    &mut s.dmu,
                    &mut s.proj,
                );
                for idx in 0..wb {
                    tr[idx] *= s.md[idx];
                }
            }
        } else {
            for idx in 0..wb {
                s.z[idx] = mish(s.u[idx]);
            }
        }
        // A2, residual add
        let a2 = blk.a2.as_slice().unwrap();
        matmul_cols(&mut s.h2, a2, &s.z, w, w, b);
        for i in 0..w {
            let bias = blk.b2[i];
            let brow = &s.h2[i * b..i * b + b];
            let hrow = &mut s.h[i * b..i * b + b];
            for j in 0..b {
                hrow[j] += brow[j] + bias;
            }
        }
        if want_jacobian {
            for r in 0..d {
                let tr = &mut s.t[r * wb..(r + 1) * wb];
                s.tscratch[..wb].copy_from_slice(tr);
                matmul_cols(tr, a2, &s.tscratch[..wb], w, w, b);
                let ti = &s.tin[r * wb..(r + 1) * wb];
                for idx in 0..wb {
                    tr[idx] += ti[idx];
                }
            }
        }
    }

    // output projection
    let wo = ten.w_o.as_slice().unwrap();
    matmul_cols(&mut s.val[..d * b], wo, &s.h, d, w, b);
    for i in 0..d {
        let bias = ten.b_o[i];
        for v in &mut s.val[i * b..i * b + b] {
            *v += bias;
        }
    }
    if want_jacobian {
        for r in 0..d {
            let tr = &s.t[r * wb..(r + 1) * wb];
            matmul_cols(&mut s.h2[..d * b], wo, tr, d, w, b);
            for i in 0..d {
                let src = &s.h2[i * b..i * b + b];
                for j in 0..b {
                    s.jac[j * d * d + i * d + r] = src[j];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{eval_velocity_jacobian, init_params};

    #[test]
    fn chunk_agrees_with_pointwise_reference() {
        let p = init_params(3, 20, 2, 4, 17).unwrap();
        let b = 5;
        let xs: Vec<f64> = (0..b * 3).map(|i| (i as f64) * 0.37 - 2.0).collect();
        let t = 0.42;
        let mut s = ChunkScratch::new(&p, b);
        eval_chunk(&p, &xs, t, b, true, &mut s);
        for j in 0..b {
            let x = &xs[j * 3..(j + 1) * 3];
            let want = eval_velocity_jacobian(&p, x, t).unwrap();
            for i in 0..3 {
                let got = s.val[i * b + j];
                assert!(
                    (got - want.value[i]).abs() <= 1e-12 * (1.0 + want.value[i].abs()),
                    "value[{i}] point {j}: {got} vs {}",
                    want.value[i]
                );
                for r in 0..3 {
                    let gj = s.jac[j * 9 + i * 3 + r];
                    let wj = want.jacobian[[i, r]];
                    assert!(
                        (gj - wj).abs() <= 1e-11 * (1.0 + wj.abs()),
                        "jac[{i}][{r}] point {j}: {gj} vs {wj}"
                    );
                }
            }
        }
    }

    #[test]
    fn results_do_not_depend_on_chunk_grouping() {
        let p = init_params(2, 16, 2, 4, 23).unwrap();
        let xs: Vec<f64> = (0..16).map(|i| (i as f64) * 0.21 - 1.5).collect();
        let t = 0.7;
        let b = 8;
        let mut s_all = ChunkScratch::new(&p, b);
        eval_chunk(&p, &xs, t, b, true, &mut s_all);
        for j in 0..b {
            let mut s1 = ChunkScratch::new(&p, 1);
            eval_chunk(&p, &xs[j * 2..(j + 1) * 2], t, 1, true, &mut s1);
            for i in 0..2 {
                assert_eq!(s1.val[i].to_bits(), s_all.val[i * b + j].to_bits());
                for r in 0..2 {
                    assert_eq!(
                        s1.jac[i * 2 + r].to_bits(),
                        s_all.jac[j * 4 + i * 2 + r].to_bits()
                    );
                }
            }
        }
    }
}
