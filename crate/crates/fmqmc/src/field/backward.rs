//! Reverse-mode parameter gradients of the mean squared CFM regression
//! loss over a batch.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::forward::{forward_batch_taped, mish_deriv};
use super::{Tensors, VelocityParams};
use crate::error::{Error, Result};

/// Mean-squared loss `mean_i ‖v_θ(x_i, t_i) - y_i‖²` and its exact
/// gradient in θ, shaped like the parameter tensors.
///
/// The reduction over the batch is a fixed-order sum (GEMM over the batch
/// axis), so results do not depend on any thread count.
pub fn grad_params(
    p: &VelocityParams,
    x: ArrayView2<'_, f64>,
    t: ArrayView1<'_, f64>,
    target_velocity: ArrayView2<'_, f64>,
) -> Result<(f64, Tensors)> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if x.dim() != target_velocity.dim() || t.len() != n || x.ncols() != p.shape.d {
        return Err(Error::InvalidInput("inconsistent batch shapes".into()));
    }

    let ten = &p.tensors;
    let (v, tape) = forward_batch_taped(p, x, t);
    let resid = &v - &target_velocity;
    let loss = resid.iter().map(|&r| r * r).sum::<f64>() / n as f64;
    let gv = resid.mapv(|r| 2.0 * r / n as f64);

    let mut g = Tensors::zeros(&p.shape);

    g.w_o = gv.t().dot(&tape.h_final);
    g.b_o = gv.sum_axis(Axis(0));
    let mut gh = gv.dot(&ten.w_o);

    for (b, (bt, gb)) in ten
        .blocks
        .iter()
        .zip(tape.blocks.iter().zip(g.blocks.iter_mut()))
        .rev()
        .map(|(b, rest)| (b, rest))
    {
        // h_out = h_in + branch: the branch gradient is gh itself.
        gb.a2 = gh.t().dot(&bt.z2);
        gb.b2 = gh.sum_axis(Axis(0));
        let gz2 = gh.dot(&b.a2);
        let gu2 = &gz2 * &bt.u2.mapv(mish_deriv);
        gb.ln2_gain = (&gu2 * &bt.xn2).sum_axis(Axis(0));
        gb.ln2_off = gu2.sum_axis(Axis(0));
        let ga1 = layer_norm_backward(&gu2, &bt.xn2, &bt.inv_s2, &b.ln2_gain);

        gb.a1 = ga1.t().dot(&bt.z1);
        gb.b1 = ga1.sum_axis(Axis(0));
        let gz1 = ga1.dot(&b.a1);
        let gu1 = &gz1 * &bt.u1.mapv(mish_deriv);
        gb.ln1_gain = (&gu1 * &bt.xn1).sum_axis(Axis(0));
        gb.ln1_off = gu1.sum_axis(Axis(0));
        let gh0 = layer_norm_backward(&gu1, &bt.xn1, &bt.inv_s1, &b.ln1_gain);
        gh += &gh0;
    }

    g.w_x = gh.t().dot(&x);
    g.b_x = gh.sum_axis(Axis(0));
    g.w_t = gh.t().dot(&tape.phi);
    g.b_t = gh.sum_axis(Axis(0));

    Ok((loss, g))
}

/// Given the gradient w.r.t. the layer-norm output (pre gain/offset has
/// already been applied by the caller via `gu`), propagate to the input:
/// `gh = (gxn - mean(gxn) - xn * mean(gxn ⊙ xn)) * inv_s` per row,
/// with `gxn = gu ⊙ gain`.
fn layer_norm_backward(
    gu: &Array2<f64>,
    xn: &Array2<f64>,
    inv_s: &Array1<f64>,
    gain: &Array1<f64>,
) -> Array2<f64> {
    let (n, w) = gu.dim();
    let wf = w as f64;
    let mut out = Array2::zeros((n, w));
    for i in 0..n {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..w {
            let gx = gu[[i, j]] * gain[j];
            m1 += gx;
            m2 += gx * xn[[i, j]];
        }
        m1 /= wf;
        m2 /= wf;
        let is = inv_s[i];
        for j in 0..w {
            let gx = gu[[i, j]] * gain[j];
            out[[i, j]] = (gx - m1 - xn[[i, j]] * m2) * is;
        }
    }
    out
}
