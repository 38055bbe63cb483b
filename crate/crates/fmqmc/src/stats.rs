//! Small statistical helpers shared by diagnostics and tests.

/// Two-sided Kolmogorov-Smirnov statistic of a sample against U(0,1).
/// Sorts the input in place.
pub fn ks_statistic_uniform(sample: &mut [f64]) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sample.iter().enumerate() {
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((x - lo).abs()).max((hi - x).abs());
    }
    d
}

/// Pearson chi-square statistic of a sample in `[0,1)` against the uniform
/// distribution over `bins` equal cells.
pub fn chi_square_uniform(sample: &[f64], bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &x in sample {
        let b = ((x * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let expect = sample.len() as f64 / bins as f64;
    counts
        .iter()
        .map(|&c| {
            let diff = c as f64 - expect;
            diff * diff / expect
        })
        .sum()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Ordinary least squares line fit `y = slope * x + intercept`.
/// Returns `(slope, intercept, r_squared)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2);
    let mx = mean(x);
    let my = mean(y);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let e = yi - (slope * xi + intercept);
        ss_res += e * e;
        ss_tot += (yi - my) * (yi - my);
    }
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (slope, intercept, r2)
}

/// Root-mean-square error against a known truth, accumulated in a
/// permutation-invariant order (squared errors are sorted before summing).
pub fn rmse(estimates: &[f64], truth: f64) -> f64 {
    let mut sq: Vec<f64> = estimates.iter().map(|&e| (e - truth) * (e - truth)).collect();
    sq.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (sq.iter().sum::<f64>() / sq.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let (s, b, r2) = fit_line(&x, &y);
        assert!((s - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_is_permutation_invariant_bitwise() {
        let a = [0.31, 0.11, 0.72, 0.54, 0.99];
        let b = [0.99, 0.31, 0.54, 0.11, 0.72];
        assert_eq!(rmse(&a, 0.5).to_bits(), rmse(&b, 0.5).to_bits());
    }

    #[test]
    fn ks_of_perfect_grid_is_small() {
        let n = 1000;
        let mut xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        assert!(ks_statistic_uniform(&mut xs) <= 0.5 / n as f64 + 1e-12);
    }
}
