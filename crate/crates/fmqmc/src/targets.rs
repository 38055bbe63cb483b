//! Benchmark target distributions: the two Gaussian mixtures, the
//! banana-shaped pushforward of a standard normal, and the standard
//! logistic prior itself (the base measure, used as the perfect-map
//! target in tests). Each target carries an evaluable log-density, a
//! seeded i.i.d. sampler, and analytic first/second moments per
//! coordinate.

use ndarray::{Array1, Array2};
use rand::RngExt as _;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::base::logistic_logpdf_scalar;
use crate::error::{Error, Result};

/// A full-rank Gaussian mixture specification with precomputed Cholesky
/// factors and log-normalizers.
#[derive(Debug, Clone)]
pub struct GmmSpec {
    pub means: Vec<Array1<f64>>,
    pub covs: Vec<Array2<f64>>,
    chols: Vec<Array2<f64>>,
    log_norms: Vec<f64>,
    log_weight: f64,
}

impl GmmSpec {
    /// Equal-weight mixture. Covariances must be symmetric positive
    /// definite.
    pub fn equal_weight(means: Vec<Array1<f64>>, covs: Vec<Array2<f64>>) -> Result<Self> {
        assert_eq!(means.len(), covs.len());
        let d = means[0].len();
        let mut chols = Vec::with_capacity(covs.len());
        let mut log_norms = Vec::with_capacity(covs.len());
        for c in &covs {
            let l = cholesky(c)
                .ok_or_else(|| Error::InvalidInput("covariance not positive definite".into()))?;
            let log_det: f64 = (0..d).map(|i| l[[i, i]].ln()).sum::<f64>() * 2.0;
            log_norms.push(-0.5 * (d as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det);
            chols.push(l);
        }
        let k = means.len() as f64;
        Ok(Self { means, covs, chols, log_norms, log_weight: -(k.ln()) })
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut comps = Vec::with_capacity(self.means.len());
        for k in 0..self.means.len() {
            let r = forward_solve(&self.chols[k], x, &self.means[k]);
            let quad: f64 = r.iter().map(|&v| v * v).sum();
            comps.push(self.log_norms[k] - 0.5 * quad);
        }
        self.log_weight + log_sum_exp(&comps)
    }

    fn sample_one(&self, rng: &mut ChaCha20Rng, out: &mut [f64]) {
        let k = rng.random_range(0..self.means.len());
        let d = out.len();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let l = &self.chols[k];
        for i in 0..d {
            let mut acc = self.means[k][i];
            for j in 0..=i {
                acc += l[[i, j]] * z[j];
            }
            out[i] = acc;
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Lower-triangular Cholesky factor, or None if not positive definite.
fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves L r = (x - mu) by forward substitution.
fn forward_solve(l: &Array2<f64>, x: &[f64], mu: &Array1<f64>) -> Vec<f64> {
    let n = x.len();
    let mut r = vec![0.0; n];
    for i in 0..n {
        let mut s = x[i] - mu[i];
        for k in 0..i {
            s -= l[[i, k]] * r[k];
        }
        r[i] = s / l[[i, i]];
    }
    r
}

#[derive(Debug, Clone)]
enum Kind {
    Gmm(GmmSpec),
    Banana { a: f64, b: f64, c: f64 },
    Logistic,
}

/// An evaluable, samplable target with analytic moment oracles.
#[derive(Debug, Clone)]
pub struct Target {
    pub id: String,
    pub d: usize,
    kind: Kind,
    /// `(E[X_j], E[X_j^2])` per coordinate.
    moments: Vec<(f64, f64)>,
    /// Tail-decay exponent of Assumption-style diagnostics; `inf` flags
    /// Gaussian-type (faster than any exponential) decay.
    pub tail_rate: f64,
}

impl Target {
    /// Unnormalized-allowed log-density; finite at every finite `x`.
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.d);
        match &self.kind {
            Kind::Gmm(g) => g.log_pdf(x),
            Kind::Banana { a, b, c } => {
                let z2 = (x[1] - a * x[0] * x[0] - c) / b;
                -0.5 * (x[0] * x[0] + z2 * z2)
                    - (2.0 * std::f64::consts::PI).ln()
                    - b.abs().ln()
            }
            Kind::Logistic => x.iter().map(|&v| logistic_logpdf_scalar(v)).sum(),
        }
    }

    /// Analytic `(E[X_j], E[X_j^2])` per coordinate.
    pub fn moments(&self) -> &[(f64, f64)] {
        &self.moments
    }

    /// `n` i.i.d. draws, deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        self.sample_with_rng(n, &mut rng)
    }

    pub(crate) fn sample_with_rng(&self, n: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
        let mut out = Array2::zeros((n, self.d));
        for mut row in out.rows_mut() {
            let slice = row.as_slice_mut().expect("contiguous");
            match &self.kind {
                Kind::Gmm(g) => g.sample_one(rng, slice),
                Kind::Banana { a, b, c } => {
                    let z1: f64 = StandardNormal.sample(rng);
                    let z2: f64 = StandardNormal.sample(rng);
                    slice[0] = z1;
                    slice[1] = a * z1 * z1 + c + b * z2;
                }
                Kind::Logistic => {
                    for v in slice.iter_mut() {
                        // inverse-CDF draw; rejects the measure-zero u = 0
                        let mut u: f64 = rng.random();
                        while u == 0.0 {
                            u = rng.random();
                        }
                        *v = crate::base::logit_scalar(u);
                    }
                }
            }
        }
        out
    }
}

/// The four-component 2D Gaussian mixture with the component list used in
/// the experiments (first covariance scaled by 1/40^2, the rest by 1/4^2).
pub fn make_gmm2d() -> Target {
    make_gmm2d_scaled(1.0 / 1600.0)
}

/// As [`make_gmm2d`], with an explicit scale applied to the first
/// component's covariance matrix `[[2, 0.6], [0.6, 1]]`. The default is
/// `1/40^2` (the displayed matrix); `1/16` gives uniform scaling across
/// components.
pub fn make_gmm2d_scaled(sigma1_scale: f64) -> Target {
    let means = vec![
        Array1::from(vec![1.0, 1.0]),
        Array1::from(vec![2.0, 3.6]),
        Array1::from(vec![3.3, 2.8]),
        Array1::from(vec![1.1, 2.9]),
    ];
    let s = 1.0 / 16.0;
    let covs = vec![
        ndarray::arr2(&[[2.0, 0.6], [0.6, 1.0]]) * sigma1_scale,
        ndarray::arr2(&[[2.0, -0.4], [-0.4, 2.0]]) * s,
        ndarray::arr2(&[[3.0, 0.8], [0.8, 2.0]]) * s,
        ndarray::arr2(&[[3.0, 0.0], [0.0, 0.5]]) * s,
    ];
    let moments = mixture_moments(&means, &covs);
    let gmm = GmmSpec::equal_weight(means, covs).expect("spd");
    Target { id: "gmm2d".into(), d: 2, kind: Kind::Gmm(gmm), moments, tail_rate: f64::INFINITY }
}

/// The 30-dimensional four-component mixture: means `(±2, ±2, 0, …, 0)`,
/// shared covariance `0.5 I`.
pub fn make_gmm30d() -> Target {
    let d = 30;
    let mut means = Vec::new();
    for (s1, s2) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
        let mut m = Array1::zeros(d);
        m[0] = 2.0 * s1;
        m[1] = 2.0 * s2;
        means.push(m);
    }
    let covs = vec![Array2::eye(d) * 0.5; 4];
    let moments = mixture_moments(&means, &covs);
    let gmm = GmmSpec::equal_weight(means, covs).expect("spd");
    Target { id: "gmm30d".into(), d, kind: Kind::Gmm(gmm), moments, tail_rate: f64::INFINITY }
}

/// Banana-shaped pushforward of `N(0, I_2)` under
/// `x1 = z1, x2 = a z1^2 + c + b z2` with `a = 0.3`, `b = 1/sqrt(2)`,
/// `c = -1`.
pub fn make_banana() -> Target {
    let (a, b, c) = (0.3, 1.0 / 2.0f64.sqrt(), -1.0);
    // E[x2] = a + c; Var(x2) = 2a^2 + b^2.
    let m2_mean = a + c;
    let m2_second = 2.0 * a * a + b * b + m2_mean * m2_mean;
    Target {
        id: "banana".into(),
        d: 2,
        kind: Kind::Banana { a, b, c },
        moments: vec![(0.0, 1.0), (m2_mean, m2_second)],
        tail_rate: f64::INFINITY,
    }
}

/// The standard logistic prior itself, as a target. Useful for
/// perfect-map constructions: the identity flow transports the base
/// exactly onto it.
pub fn make_logistic(d: usize) -> Target {
    let var = std::f64::consts::PI.powi(2) / 3.0;
    Target {
        id: "logistic".into(),
        d,
        kind: Kind::Logistic,
        moments: vec![(0.0, var); d],
        tail_rate: 1.0,
    }
}

/// Target registry for CLI/config selection.
pub fn by_id(id: &str) -> Result<Target> {
    match id {
        "gmm2d" => Ok(make_gmm2d()),
        "gmm30d" => Ok(make_gmm30d()),
        "banana" => Ok(make_banana()),
        other => Err(Error::InvalidInput(format!(
            "unknown target '{other}' (expected gmm2d, gmm30d, or banana)"
        ))),
    }
}

fn mixture_moments(means: &[Array1<f64>], covs: &[Array2<f64>]) -> Vec<(f64, f64)> {
    let d = means[0].len();
    let k = means.len() as f64;
    (0..d)
        .map(|j| {
            let m1 = means.iter().map(|m| m[j]).sum::<f64>() / k;
            let m2 = means
                .iter()
                .zip(covs)
                .map(|(m, c)| m[j] * m[j] + c[[j, j]])
                .sum::<f64>()
                / k;
            (m1, m2)
        })
        .collect()
}
