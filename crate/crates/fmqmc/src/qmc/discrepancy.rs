//! Exact star discrepancy for d <= 2 and dyadic elementary-interval
//! balance counts. Both are test/diagnostic tools: exact enumeration is
//! exponential in d and only implemented where it is cheap.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Exact star discrepancy `D*` of a point set in `[0,1)^d`, `d <= 2`.
///
/// Enumerates the critical anchored boxes whose upper corners have
/// coordinates drawn from the point coordinates and 1, evaluating the
/// empirical measure both as a left limit (points strictly inside) and a
/// right limit (boundary points included) in each coordinate.
pub fn star_discrepancy(points: ArrayView2<'_, f64>) -> Result<f64> {
    let (n, d) = points.dim();
    if d == 0 || d > 2 {
        return Err(Error::UnsupportedDimension {
            dim: d,
            reason: "exact star discrepancy implemented for d <= 2 only".into(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty point set".into()));
    }
    match d {
        1 => Ok(star_discrepancy_1d(points)),
        _ => Ok(star_discrepancy_2d(points)),
    }
}

fn star_discrepancy_1d(points: ArrayView2<'_, f64>) -> f64 {
    let n = points.nrows();
    let mut xs: Vec<f64> = points.column(0).to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nf = n as f64;
    let mut best = 0.0f64;
    let mut candidates: Vec<f64> = xs.clone();
    candidates.push(1.0);
    candidates.dedup();
    for &a in &candidates {
        let below = xs.partition_point(|&x| x < a) as f64 / nf;
        let at_or_below = xs.partition_point(|&x| x <= a) as f64 / nf;
        best = best.max((below - a).abs()).max((at_or_below - a).abs());
    }
    best
}

fn star_discrepancy_2d(points: ArrayView2<'_, f64>) -> f64 {
    let n = points.nrows();
    let nf = n as f64;
    let mut pts: Vec<(f64, f64)> = (0..n)
        .map(|i| (points[[i, 0]], points[[i, 1]]))
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut xcand: Vec<f64> = pts.iter().map(|p| p.0).collect();
    xcand.push(1.0);
    xcand.dedup();
    let mut ycand: Vec<f64> = pts.iter().map(|p| p.1).collect();
    ycand.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ycand.push(1.0);
    ycand.dedup();

    let mut best = 0.0f64;
    // ys_lt: second coordinates of points with x < a; ys_le: with x <= a.
    let mut ys_lt: Vec<f64> = Vec::with_capacity(n);
    let mut ys_le: Vec<f64> = Vec::with_capacity(n);
    let mut i_lt = 0usize;
    let mut i_le = 0usize;
    for &a in &xcand {
        while i_lt < n && pts[i_lt].0 < a {
            let y = pts[i_lt].1;
            let pos = ys_lt.partition_point(|&t| t <= y);
            ys_lt.insert(pos, y);
            i_lt += 1;
        }
        while i_le < n && pts[i_le].0 <= a {
            let y = pts[i_le].1;
            let pos = ys_le.partition_point(|&t| t <= y);
            ys_le.insert(pos, y);
            i_le += 1;
        }
        for &b in &ycand {
            let vol = a * b;
            for ys in [&ys_lt, &ys_le] {
                let below = ys.partition_point(|&t| t < b) as f64 / nf;
                let at_or_below = ys.partition_point(|&t| t <= b) as f64 / nf;
                best = best.max((below - vol).abs()).max((at_or_below - vol).abs());
            }
        }
    }
    best
}

/// Checks that every dyadic elementary interval of volume `2^-m` contains
/// exactly one of the `2^m` points (the defining balance property of a
/// `(0, m, d)`-net in base 2). Supports d <= 2.
pub fn dyadic_balance(points: ArrayView2<'_, f64>, m: u32) -> Result<bool> {
    let (n, d) = points.dim();
    if d == 0 || d > 2 {
        return Err(Error::UnsupportedDimension {
            dim: d,
            reason: "elementary-interval balance implemented for d <= 2 only".into(),
        });
    }
    if n != 1usize << m {
        return Err(Error::InvalidInput(format!(
            "balance check needs 2^{m} points, got {n}"
        )));
    }
    // Valid partitions: k1 + k2 = m with k2 = 0 forced in 1D.
    let k1_range = if d == 1 { m..=m } else { 0..=m };
    for k1 in k1_range {
        let k2 = m - k1;
        let (b1, b2) = (1usize << k1, 1usize << k2);
        let mut counts = vec![0u32; 1 << m];
        for i in 0..n {
            let c1 = ((points[[i, 0]] * b1 as f64) as usize).min(b1 - 1);
            let idx = if d == 2 {
                let c2 = ((points[[i, 1]] * b2 as f64) as usize).min(b2 - 1);
                c1 * b2 + c2
            } else {
                c1
            };
            counts[idx] += 1;
        }
        if counts[..1 << m].iter().any(|&c| c != 1) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn single_midpoint_has_half_discrepancy() {
        let p = arr2(&[[0.5]]);
        assert!((star_discrepancy(p.view()).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn first_four_van_der_corput_points() {
        let p = arr2(&[[0.0], [0.5], [0.25], [0.75]]);
        assert!((star_discrepancy(p.view()).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_three_dimensional_input() {
        let p = ndarray::Array2::<f64>::zeros((4, 3));
        assert!(matches!(
            star_discrepancy(p.view()),
            Err(Error::UnsupportedDimension { dim: 3, .. })
        ));
    }

    #[test]
    fn one_d_matches_sorted_formula() {
        // Classic closed form for 1D: max_i max(x_(i) - (i-1)/n, i/n - x_(i)).
        let sets = [
            vec![0.1, 0.62, 0.3, 0.94],
            vec![0.5, 0.5, 0.25],
            vec![0.9],
            vec![0.0, 0.999, 0.40001],
        ];
        for xs in sets {
            let n = xs.len();
            let mut s = xs.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut want = 0.0f64;
            for (i, &x) in s.iter().enumerate() {
                want = want
                    .max(x - i as f64 / n as f64)
                    .max((i + 1) as f64 / n as f64 - x);
            }
            let arr = ndarray::Array2::from_shape_vec((n, 1), xs).unwrap();
            let got = star_discrepancy(arr.view()).unwrap();
            assert!((got - want).abs() < 1e-14, "got {got}, want {want}");
        }
    }
}
