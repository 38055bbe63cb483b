//! Forward evaluation of the velocity field, with optional forward-mode
//! tangent propagation for exact state Jacobians.
//!
//! The scalar value path is shared verbatim between [`eval_velocity`] and
//! [`eval_velocity_jacobian`], so the `value` field of the latter is
//! bit-identical to the former.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{FieldOutputWithJacobian, VelocityParams, LN_EPS};
use crate::error::{Error, Result};

/// `mish(z) = z·tanh(softplus(z))` and its derivative
/// `mish'(z) = tanh(s) + z (1 - tanh² s) σ(z)`, both from a single `exp`:
/// with `p = 1 + e^z`, `tanh(ln p) = (p² - 1)/(p² + 1)`, where
/// `p² - 1 = e^z (2 + e^z)` avoids the cancellation at `z → -∞`.
/// Beyond `z = 36` the tanh factor is 1.0 in f64 and the branch returns
/// the saturated values exactly.
#[inline]
pub(crate) fn mish_parts(z: f64) -> (f64, f64) {
    if z >= 36.0 {
        return (z, 1.0);
    }
    let e = z.exp();
    let num = e * (2.0 + e); // p^2 - 1
    let t = num / (num + 2.0); // tanh(softplus(z))
    let sig = e / (1.0 + e);
    (z * t, t + z * (1.0 - t * t) * sig)
}

#[inline]
pub(crate) fn mish(z: f64) -> f64 {
    mish_parts(z).0
}

#[inline]
pub(crate) fn mish_deriv(z: f64) -> f64 {
    mish_parts(z).1
}

/// Fourier time features `(sin(2π 2^{k-1} t), cos(2π 2^{k-1} t))_{k=1..K}`,
/// interleaved sin/cos.
pub(crate) fn time_features(t: f64, k_freqs: usize) -> Array1<f64> {
    let mut phi = Array1::zeros(2 * k_freqs);
    let mut freq = 2.0 * std::f64::consts::PI;
    for k in 0..k_freqs {
        let a = freq * t;
        phi[2 * k] = a.sin();
        phi[2 * k + 1] = a.cos();
        freq *= 2.0;
    }
    phi
}

/// Row-stats layer norm of a vector; returns `(out, xn, inv_s)` where
/// `xn` is the normalized input and `inv_s = 1/sqrt(var + ε)`.
fn layer_norm(h: ArrayView1<'_, f64>, gain: &Array1<f64>, off: &Array1<f64>) -> (Array1<f64>, Array1<f64>, f64) {
    let w = h.len() as f64;
    let mu = h.sum() / w;
    let xc = h.mapv(|x| x - mu);
    let var = xc.iter().map(|&x| x * x).sum::<f64>() / w;
    let inv_s = 1.0 / (var + LN_EPS).sqrt();
    let xn = xc.mapv(|x| x * inv_s);
    let out = &xn * gain + off;
    (out, xn, inv_s)
}

/// Tangent of layer norm: given tangent rows `dh` (one row per direction),
/// the centered input `xn` (normalized) and `inv_s`.
fn layer_norm_tangent(
    dh: &Array2<f64>,
    xn: &Array1<f64>,
    inv_s: f64,
    gain: &Array1<f64>,
) -> Array2<f64> {
    let w = xn.len() as f64;
    let dmu = dh.sum_axis(Axis(1)).mapv(|x| x / w); // per-direction mean
    let mut out = dh.clone();
    for (mut row, &dm) in out.axis_iter_mut(Axis(0)).zip(dmu.iter()) {
        // dxc = dh - dmu; ds/s = mean(xn ⊙ dxc) * inv_s, so
        // dxn = inv_s * (dxc - xn * mean(xn ⊙ dxc)).
        row.mapv_inplace(|x| x - dm);
        let proj: f64 = row.iter().zip(xn.iter()).map(|(&a, &b)| a * b).sum::<f64>() / w;
        for (o, (&x, &g)) in row.iter_mut().zip(xn.iter().zip(gain.iter())) {
            *o = g * inv_s * (*o - x * proj);
        }
    }
    out
}

fn check_inputs(p: &VelocityParams, x: &[f64], t: f64) -> Result<()> {
    if x.len() != p.shape.d {
        return Err(Error::InvalidInput(format!(
            "state dimension {} does not match field dimension {}",
            x.len(),
            p.shape.d
        )));
    }
    if !x.iter().all(|v| v.is_finite()) || !t.is_finite() {
        return Err(Error::InvalidInput("non-finite field input".into()));
    }
    Ok(())
}

/// Shared value/tangent sweep. `tangent = None` computes just the value;
/// `Some(T)` propagates the rows of `T` (directions x width space).
fn forward_point(
    p: &VelocityParams,
    x: &[f64],
    t: f64,
    want_jacobian: bool,
) -> (Array1<f64>, Option<Array2<f64>>) {
    let ten = &p.tensors;
    let d = p.shape.d;
    let xv = ArrayView1::from(x);

    let phi = time_features(t, p.shape.k_freqs);
    let mut h: Array1<f64> = ten.w_x.dot(&xv) + &ten.b_x + ten.w_t.dot(&phi) + &ten.b_t;
    // Tangent rows: direction j starts as column j of w_x, i.e. w_x^T.
    let mut tng: Option<Array2<f64>> = want_jacobian.then(|| ten.w_x.t().to_owned());

    for b in &ten.blocks {
        let (u1, xn1, is1) = layer_norm(h.view(), &b.ln1_gain, &b.ln1_off);
        let z1 = u1.mapv(mish);
        let a1 = ten_dot(&b.a1, &z1) + &b.b1;
        let (u2, xn2, is2) = layer_norm(a1.view(), &b.ln2_gain, &b.ln2_off);
        let z2 = u2.mapv(mish);
        let branch = ten_dot(&b.a2, &z2) + &b.b2;

        if let Some(tn) = tng.as_mut() {
            let du1 = layer_norm_tangent(tn, &xn1, is1, &b.ln1_gain);
            let dz1 = scale_cols(&du1, &u1.mapv(mish_deriv));
            let da1 = dz1.dot(&b.a1.t());
            let du2 = layer_norm_tangent(&da1, &xn2, is2, &b.ln2_gain);
            let dz2 = scale_cols(&du2, &u2.mapv(mish_deriv));
            *tn += &dz2.dot(&b.a2.t());
        }
        h += &branch;
    }

    let v = ten.w_o.dot(&h) + &ten.b_o;
    let jac = tng.map(|tn| {
        // J[i][j] = dv_i/dx_j; rows of tn are directions, so J = (tn W_o^T)^T.
        let mut j = Array2::zeros((d, d));
        let jt = tn.dot(&ten.w_o.t()); // (d_directions, d_outputs)
        for i in 0..d {
            for jj in 0..d {
                j[[i, jj]] = jt[[jj, i]];
            }
        }
        j
    });
    (v, jac)
}

#[inline]
fn ten_dot(a: &Array2<f64>, x: &Array1<f64>) -> Array1<f64> {
    a.dot(x)
}

fn scale_cols(m: &Array2<f64>, s: &Array1<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        for (o, &f) in row.iter_mut().zip(s.iter()) {
            *o *= f;
        }
    }
    out
}

/// `v_θ(x, t)`.
pub fn eval_velocity(p: &VelocityParams, x: &[f64], t: f64) -> Result<Array1<f64>> {
    check_inputs(p, x, t)?;
    Ok(forward_point(p, x, t, false).0)
}

/// `v_θ(x, t)` together with the exact `d x d` Jacobian `∂v/∂x`, computed
/// by `d` forward-mode dual sweeps through the same graph.
pub fn eval_velocity_jacobian(
    p: &VelocityParams,
    x: &[f64],
    t: f64,
) -> Result<FieldOutputWithJacobian> {
    check_inputs(p, x, t)?;
    let (value, jac) = forward_point(p, x, t, true);
    Ok(FieldOutputWithJacobian { value, jacobian: jac.expect("tangent requested") })
}

/// Batched value evaluation with per-row times. Used by diagnostics; the
/// training path keeps its own taped forward.
pub fn eval_velocity_batch(
    p: &VelocityParams,
    x: ArrayView2<'_, f64>,
    t: ArrayView1<'_, f64>,
) -> Result<Array2<f64>> {
    let n = x.nrows();
    let mut out = Array2::zeros((n, p.shape.d));
    for i in 0..n {
        let row = x.row(i);
        let v = eval_velocity(p, row.as_slice().expect("contiguous"), t[i])?;
        out.row_mut(i).assign(&v);
    }
    Ok(out)
}

/// Batched taped forward used by training. Returns the network output and
/// the tape needed for the reverse sweep.
pub(crate) struct Tape {
    pub phi: Array2<f64>,
    pub blocks: Vec<BlockTape>,
    pub h_final: Array2<f64>,
}

pub(crate) struct BlockTape {
    pub xn1: Array2<f64>,
    pub inv_s1: Array1<f64>,
    pub u1: Array2<f64>,
    pub z1: Array2<f64>,
    pub xn2: Array2<f64>,
    pub inv_s2: Array1<f64>,
    pub u2: Array2<f64>,
    pub z2: Array2<f64>,
}

pub(crate) fn forward_batch_taped(
    p: &VelocityParams,
    x: ArrayView2<'_, f64>,
    t: ArrayView1<'_, f64>,
) -> (Array2<f64>, Tape) {
    let ten = &p.tensors;
    let n = x.nrows();
    let k = p.shape.k_freqs;

    let mut phi = Array2::zeros((n, 2 * k));
    for (i, mut row) in phi.axis_iter_mut(Axis(0)).enumerate() {
        row.assign(&time_features(t[i], k));
    }
    let mut h = x.dot(&ten.w_x.t()) + phi.dot(&ten.w_t.t());
    for mut row in h.axis_iter_mut(Axis(0)) {
        row += &ten.b_x;
        row += &ten.b_t;
    }
    let mut blocks = Vec::with_capacity(ten.blocks.len());
    for b in &ten.blocks {
        let (u1, xn1, is1) = layer_norm_rows(&h, &b.ln1_gain, &b.ln1_off);
        let z1 = u1.mapv(mish);
        let mut a1 = z1.dot(&b.a1.t());
        for mut row in a1.axis_iter_mut(Axis(0)) {
            row += &b.b1;
        }
        let (u2, xn2, is2) = layer_norm_rows(&a1, &b.ln2_gain, &b.ln2_off);
        let z2 = u2.mapv(mish);
        let mut branch = z2.dot(&b.a2.t());
        for mut row in branch.axis_iter_mut(Axis(0)) {
            row += &b.b2;
        }
        h += &branch;
        blocks.push(BlockTape { xn1, inv_s1: is1, u1, z1, xn2, inv_s2: is2, u2, z2 });
    }

    let mut v = h.dot(&ten.w_o.t());
    for mut row in v.axis_iter_mut(Axis(0)) {
        row += &ten.b_o;
    }
    let tape = Tape { phi, blocks, h_final: h };
    (v, tape)
}

/// Per-row layer norm over a batch; returns `(out, xn, inv_s)`.
pub(crate) fn layer_norm_rows(
    h: &Array2<f64>,
    gain: &Array1<f64>,
    off: &Array1<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let (n, w) = h.dim();
    let wf = w as f64;
    let mut xn = Array2::zeros((n, w));
    let mut inv_s = Array1::zeros(n);
    let mut out = Array2::zeros((n, w));
    for i in 0..n {
        let row = h.row(i);
        let mu = row.sum() / wf;
        let mut var = 0.0;
        for &x in row {
            var += (x - mu) * (x - mu);
        }
        var /= wf;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_s[i] = is;
        for j in 0..w {
            let z = (row[j] - mu) * is;
            xn[[i, j]] = z;
            out[[i, j]] = gain[j] * z + off[j];
        }
    }
    (out, xn, inv_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::init_params;
    use approx::assert_relative_eq;

    #[test]
    fn zero_network_outputs_bias() {
        let mut p = crate::field::VelocityParams::zero(2, 8, 2, 4);
        p.tensors.b_o[0] = 1.5;
        p.tensors.b_o[1] = -0.5;
        for (x, t) in [([0.0, 0.0], 0.0), ([3.0, -7.0], 0.5), ([100.0, 2.0], 1.0)] {
            let v = eval_velocity(&p, &x, t).unwrap();
            assert_eq!(v.as_slice().unwrap(), &[1.5, -0.5]);
        }
    }

    #[test]
    fn time_features_at_zero() {
        let phi = time_features(0.0, 4);
        assert_eq!(phi.as_slice().unwrap(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn value_is_bit_identical_with_and_without_jacobian() {
        let p = init_params(3, 24, 2, 8, 11).unwrap();
        let x = [0.3, -1.2, 2.5];
        let v = eval_velocity(&p, &x, 0.37).unwrap();
        let vj = eval_velocity_jacobian(&p, &x, 0.37).unwrap();
        for (a, b) in v.iter().zip(vj.value.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_network_has_zero_jacobian() {
        let p = crate::field::VelocityParams::zero(2, 8, 1, 2);
        let out = eval_velocity_jacobian(&p, &[0.4, -0.2], 0.5).unwrap();
        assert!(out.jacobian.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn affine_network_jacobian_is_exact() {
        // v = A x via w_o * w_x with silenced blocks (all block tensors zero).
        let d = 2;
        let w = 4;
        let mut p = crate::field::VelocityParams::zero(d, w, 1, 2);
        let a = [[0.7, -0.3], [0.2, 1.1]];
        for i in 0..d {
            p.tensors.w_x[[i, i]] = 1.0;
            for j in 0..d {
                p.tensors.w_o[[i, j]] = a[i][j];
            }
        }
        let out = eval_velocity_jacobian(&p, &[0.3, 0.9], 0.25).unwrap();
        for i in 0..d {
            for j in 0..d {
                assert_eq!(out.jacobian[[i, j]], a[i][j]);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = init_params(2, 24, 2, 4, 3).unwrap();
        let x = [0.4, -0.8];
        let t = 0.6;
        let out = eval_velocity_jacobian(&p, &x, t).unwrap();
        let delta = 1e-5;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += delta;
            xm[j] -= delta;
            let vp = eval_velocity(&p, &xp, t).unwrap();
            let vm = eval_velocity(&p, &xm, t).unwrap();
            for i in 0..2 {
                let fd = (vp[i] - vm[i]) / (2.0 * delta);
                let rel = (out.jacobian[[i, j]] - fd).abs() / (1.0 + fd.abs());
                assert!(rel < 1e-5, "J[{i}][{j}] rel err {rel}");
            }
        }
    }

    #[test]
    fn perturbation_consistency_is_second_order() {
        // |v(x+δe_j) - v(x) - δ J e_j| = O(δ²): the Richardson ratio between
        // δ = 1e-3 and δ = 1e-4 should be close to 100.
        let p = init_params(2, 16, 2, 4, 8).unwrap();
        let x = [0.1, 0.2];
        let t = 0.3;
        let out = eval_velocity_jacobian(&p, &x, t).unwrap();
        let v0 = out.value.clone();
        let mut errs = [0.0f64; 2];
        for (k, delta) in [1e-3, 1e-4].into_iter().enumerate() {
            let mut worst = 0.0f64;
            for j in 0..2 {
                let mut xp = x;
                xp[j] += delta;
                let vp = eval_velocity(&p, &xp, t).unwrap();
                for i in 0..2 {
                    let lin = v0[i] + delta * out.jacobian[[i, j]];
                    worst = worst.max((vp[i] - lin).abs());
                }
            }
            errs[k] = worst;
        }
        let ratio = errs[0] / errs[1].max(1e-300);
        assert!(ratio > 30.0 && ratio < 300.0, "ratio {ratio}, errs {errs:?}");
    }

    #[test]
    fn batch_forward_agrees_with_pointwise() {
        let p = init_params(2, 16, 2, 4, 8).unwrap();
        let x = ndarray::arr2(&[[0.3, -0.4], [1.0, 2.0], [-3.0, 0.1]]);
        let t = ndarray::arr1(&[0.1, 0.5, 0.9]);
        let (v, _) = forward_batch_taped(&p, x.view(), t.view());
        for i in 0..3 {
            let vi = eval_velocity(&p, x.row(i).as_slice().unwrap(), t[i]).unwrap();
            for j in 0..2 {
                assert_relative_eq!(v[[i, j]], vi[j], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let p = init_params(2, 8, 1, 2, 0).unwrap();
        assert!(eval_velocity(&p, &[f64::NAN, 0.0], 0.5).is_err());
        assert!(eval_velocity(&p, &[0.0, 0.0], f64::INFINITY).is_err());
    }
}
