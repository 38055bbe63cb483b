//! Component-wise logistic base map: the logit `G = F^{-1}` sending
//! `(0,1)^d` to `ℝ^d`, its CDF inverse `F`, the log-density of the standard
//! logistic prior, and the low-order derivatives of `G` used by the growth
//! checker.
//!
//! Inputs within `2^-32` of the boundary are rejected rather than clamped;
//! the estimator layer owns the clamping policy.

use crate::error::{Error, Result};

/// Interior margin: coordinates closer than this to {0,1} are rejected.
pub const BOUNDARY_MARGIN: f64 = 1.0 / 4294967296.0; // 2^-32

/// Threshold beyond which tail-stable branches are used for exp/log1p
/// style evaluation.
const STABLE_TAIL: f64 = 36.0;

#[inline]
fn check_interior(u: f64, index: usize) -> Result<()> {
    if !(u >= BOUNDARY_MARGIN && u <= 1.0 - BOUNDARY_MARGIN) {
        return Err(Error::BoundaryInput { index, value: u });
    }
    Ok(())
}

/// `G(u) = log(u / (1-u))` applied component-wise.
pub fn logit_forward(u: &[f64]) -> Result<Vec<f64>> {
    u.iter()
        .enumerate()
        .map(|(j, &uj)| {
            check_interior(uj, j)?;
            Ok(logit_scalar(uj))
        })
        .collect()
}

/// Scalar logit without the boundary check; callers guarantee `u ∈ (0,1)`.
#[inline]
pub fn logit_scalar(u: f64) -> f64 {
    // ln(u) - ln1p(-u) keeps full precision for u near both endpoints.
    u.ln() - (-u).ln_1p()
}

/// Logistic CDF `F(x) = (1 + e^{-x})^{-1}`, tail-stable.
#[inline]
pub fn logistic_cdf(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        // e^x / (1 + e^x): no cancellation, underflows only below x < -745.
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-density of the standard logistic prior, summed over coordinates:
/// `sum_j [-|x_j| - 2 log(1 + e^{-|x_j|})]`.
pub fn logistic_logpdf(x: &[f64]) -> f64 {
    x.iter().map(|&xj| logistic_logpdf_scalar(xj)).sum()
}

#[inline]
pub fn logistic_logpdf_scalar(x: f64) -> f64 {
    let a = x.abs();
    -a - 2.0 * (-a).exp().ln_1p()
}

/// `G'(u) = 1/(u(1-u))` or `G''(u) = (2u-1)/(u(1-u))^2`.
pub fn logit_derivative(u: f64, order: usize) -> Result<f64> {
    check_interior(u, 0)?;
    let p = u * (1.0 - u);
    match order {
        1 => Ok(1.0 / p),
        2 => Ok((2.0 * u - 1.0) / (p * p)),
        k => Err(Error::UnsupportedOrder { order: k }),
    }
}

/// `log |det J_G(u)| = -sum_j log(u_j (1-u_j))`, the base contribution to a
/// transported log-determinant.
pub fn logit_log_abs_det(u: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        check_interior(uj, j)?;
        s -= (uj * (1.0 - uj)).ln();
    }
    Ok(s)
}

/// Is every coordinate at least `2^-32` from the boundary?
pub fn is_interior(u: &[f64]) -> bool {
    u.iter().all(|&x| (BOUNDARY_MARGIN..=1.0 - BOUNDARY_MARGIN).contains(&x))
}

/// Clamps coordinates to the `[2^-32, 1 - 2^-32]` interior band.
pub fn clamp_interior(u: &mut [f64]) {
    for x in u {
        *x = x.clamp(BOUNDARY_MARGIN, 1.0 - BOUNDARY_MARGIN);
    }
}

/// Inverse sigmoid tail threshold documented for the growth checker:
/// `|x| > STABLE_TAIL` always takes the asymptotic-safe branch.
pub fn stable_tail_threshold() -> f64 {
    STABLE_TAIL
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn logit_examples() {
        let v = logit_forward(&[0.5, 0.5]).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);

        let u = 1.0 / (1.0 + (-2.0f64).exp());
        assert_relative_eq!(logit_forward(&[u]).unwrap()[0], 2.0, max_relative = 1e-14);

        // Direct closed form: log(1/9).
        assert_relative_eq!(
            logit_forward(&[0.1]).unwrap()[0],
            (1.0f64 / 9.0).ln(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn boundary_inputs_are_rejected() {
        assert!(matches!(
            logit_forward(&[0.0]),
            Err(Error::BoundaryInput { index: 0, .. })
        ));
        assert!(matches!(logit_forward(&[1.0]), Err(Error::BoundaryInput { .. })));
        assert!(matches!(
            logit_forward(&[0.5, BOUNDARY_MARGIN / 2.0]),
            Err(Error::BoundaryInput { index: 1, .. })
        ));
        // The margin itself is legal: estimator clamps land exactly here.
        assert!(logit_forward(&[BOUNDARY_MARGIN, 1.0 - BOUNDARY_MARGIN]).is_ok());
    }

    #[test]
    fn cdf_examples_and_round_trip() {
        assert_eq!(logistic_cdf(0.0), 0.5);
        let x = logit_scalar(0.9);
        assert_relative_eq!(logistic_cdf(x), 0.9, max_relative = 1e-14);
        // Tail stability: F(-40) = e^-40 (1 + O(e^-40)), far from underflow.
        let f = logistic_cdf(-40.0);
        assert!(f > 0.0);
        assert_relative_eq!(f, (-40.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn round_trip_identity_to_1e12() {
        let mut u = 1e-9;
        while u < 1.0 {
            let x = logit_scalar(u);
            assert_relative_eq!(logistic_cdf(x), u, max_relative = 1e-12);
            u *= 3.7;
        }
    }

    #[test]
    fn logpdf_examples() {
        assert_relative_eq!(logistic_logpdf(&[0.0]), (0.25f64).ln(), max_relative = 1e-14);
        assert_relative_eq!(logistic_logpdf(&[0.0, 0.0]), -2.772588722239781, max_relative = 1e-12);
        // Asymptotic oracle: -x - 2 e^{-x} + O(e^{-2x}) for large x.
        let want = -30.0 - 2.0 * (-30.0f64).exp();
        assert_relative_eq!(logistic_logpdf(&[30.0]), want, max_relative = 1e-14);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        assert_eq!(logit_derivative(0.5, 1).unwrap(), 4.0);
        assert_eq!(logit_derivative(0.5, 2).unwrap(), 0.0);
        assert!(matches!(
            logit_derivative(0.5, 3),
            Err(Error::UnsupportedOrder { order: 3 })
        ));

        for &u in &[0.01f64, 0.2, 0.77, 0.99] {
            let h = 1e-6 * u.min(1.0 - u);
            let fd1 = (logit_scalar(u + h) - logit_scalar(u - h)) / (2.0 * h);
            assert_relative_eq!(logit_derivative(u, 1).unwrap(), fd1, max_relative = 1e-6);
            let fd2 = (logit_scalar(u + h) - 2.0 * logit_scalar(u) + logit_scalar(u - h)) / (h * h);
            assert_relative_eq!(logit_derivative(u, 2).unwrap(), fd2, max_relative = 1e-3);
        }
    }

    #[test]
    fn derivative_growth_bound() {
        // |G^(k)(u)| <= C_k min(u, 1-u)^-k. C_1 = 2 is minimal (G'(1/2) = 4
        // equals 2 * min^-1 there); C_2 = 2 has slack everywhere.
        let mut grid: Vec<f64> = Vec::new();
        let mut e = 1e-8f64;
        while e < 0.5 {
            grid.push(e);
            grid.push(1.0 - e);
            e *= 2.3;
        }
        grid.push(0.5);
        for &u in &grid {
            let m = u.min(1.0 - u);
            assert!(logit_derivative(u, 1).unwrap().abs() <= 2.0 / m * (1.0 + 1e-12));
            assert!(logit_derivative(u, 2).unwrap().abs() <= 2.0 / (m * m) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn logdet_equals_negative_logpdf_of_image() {
        let u = [0.3, 0.71, 0.0001, 0.9999];
        let x = logit_forward(&u).unwrap();
        let ld = logit_log_abs_det(&u).unwrap();
        assert_relative_eq!(ld, -logistic_logpdf(&x), epsilon = 1e-10);
    }

    #[test]
    fn pushforward_matches_logistic_cdf() {
        use crate::qmc::{randomize, sobol_points, RandomizationSpec};
        use crate::stats::ks_statistic_uniform;
        let ps = randomize(&sobol_points(1, 16).unwrap(), &RandomizationSpec::owen(11));
        let mut cdf_vals: Vec<f64> = ps
            .points()
            .iter()
            .filter(|&&u| u > 0.0)
            .map(|&u| logistic_cdf(logit_scalar(u)))
            .collect();
        let ks = ks_statistic_uniform(&mut cdf_vals);
        assert!(ks < 0.01, "KS = {ks}");
    }
}
