//! Dense LU with partial pivoting for the small (d <= 64) step Jacobians.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// `log |det A|` via LU with partial pivoting.
///
/// Returns [`Error::DegenerateStep`] (step index 0; callers re-tag) when a
/// pivot is exactly zero.
pub fn lu_log_abs_det(a: ArrayView2<'_, f64>) -> Result<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square matrix required");
    let mut lu: Array2<f64> = a.to_owned();
    let mut log_det = 0.0f64;
    for k in 0..n {
        // Pivot search in column k.
        let mut piv = k;
        let mut max = lu[[k, k]].abs();
        for i in (k + 1)..n {
            let v = lu[[i, k]].abs();
            if v > max {
                max = v;
                piv = i;
            }
        }
        if max == 0.0 {
            return Err(Error::DegenerateStep { step: 0 });
        }
        if piv != k {
            for j in 0..n {
                lu.swap([k, j], [piv, j]);
            }
        }
        let pivot = lu[[k, k]];
        log_det += pivot.abs().ln();
        for i in (k + 1)..n {
            let f = lu[[i, k]] / pivot;
            lu[[i, k]] = f;
            for j in (k + 1)..n {
                lu[[i, j]] -= f * lu[[k, j]];
            }
        }
    }
    Ok(log_det)
}

/// Naive matrix product for test oracles (row-major, no blocking).
pub fn matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(k, k2);
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for l in 0..k {
            let ail = a[[i, l]];
            for j in 0..m {
                out[[i, j]] += ail * b[[l, j]];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn matches_closed_form_2x2() {
        let a = arr2(&[[2.0, 1.0], [0.5, 3.0]]);
        let det: f64 = 2.0 * 3.0 - 1.0 * 0.5;
        assert!((lu_log_abs_det(a.view()).unwrap() - det.ln()).abs() < 1e-14);
    }

    #[test]
    fn negative_determinant_uses_absolute_value() {
        let a = arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        assert!(lu_log_abs_det(a.view()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_is_degenerate() {
        let a = arr2(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(lu_log_abs_det(a.view()), Err(Error::DegenerateStep { .. })));
    }

    #[test]
    fn random_product_consistency() {
        use rand::Rng;
        use rand::RngExt as _;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let a = Array2::from_shape_fn((6, 6), |_| rng.random::<f64>() - 0.5);
        let b = Array2::from_shape_fn((6, 6), |_| rng.random::<f64>() - 0.5);
        let ab = matmul(a.view(), b.view());
        let got = lu_log_abs_det(ab.view()).unwrap();
        let want = lu_log_abs_det(a.view()).unwrap() + lu_log_abs_det(b.view()).unwrap();
        assert!((got - want).abs() < 1e-10);
    }
}
