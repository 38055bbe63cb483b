//! Conditional flow matching training.
//!
//! Each step draws a fresh batch from the straight-line conditional path
//! `x_t = (1 - (1-σ)t)·x0 + t·z` with `x0` from the logistic prior and
//! `z` from the target, regresses the field on the conditional velocity
//! `z - (1-σ)·x0`, and applies one Adam update. Simulation-free: no ODE
//! solves during training, no replay buffer.

use std::path::PathBuf;

use ndarray::{Array1, Array2};
use rand::RngExt as _;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::base::logit_scalar;
use crate::checkpoint::{save_checkpoint, TrainMeta};
use crate::error::{Error, Result};
use crate::field::{grad_params, init_params, Tensors, VelocityParams};
use crate::targets::Target;

/// Conditional-path smoothing. `sigma = 0` is the pure straight-line
/// interpolant; `sigma > 0` leaves that much terminal scale on the prior
/// component.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub sigma: f64,
}

impl Default for PathSpec {
    fn default() -> Self {
        Self { sigma: 0.0 }
    }
}

impl PathSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma) {
            return Err(Error::Config(format!("sigma must be in [0,1), got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Network shape options; unset fields fall back to per-dimension
/// defaults (width 128 / 3 blocks below d = 16, 256 / 4 above, K = 8).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub width: Option<usize>,
    pub n_blocks: Option<usize>,
    pub k_freqs: Option<usize>,
}

impl ArchConfig {
    pub fn resolve(&self, d: usize) -> (usize, usize, usize) {
        let (dw, db) = if d >= 16 { (256, 4) } else { (128, 3) };
        (
            self.width.unwrap_or(dw),
            self.n_blocks.unwrap_or(db),
            self.k_freqs.unwrap_or(8),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Steps between intermediate checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Where intermediate checkpoints go (ignored when disabled).
    pub checkpoint_path: Option<PathBuf>,
    pub target_id: String,
    pub path: PathSpec,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            n_steps: 20_000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_path: None,
            target_id: String::new(),
            path: PathSpec::default(),
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_steps == 0 {
            return Err(Error::Config("batch_size and n_steps must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.path.validate()
    }
}

/// One training batch: states on the conditional path, their times, and
/// the conditional target velocities.
pub struct CfmBatch {
    pub x: Array2<f64>,
    pub t: Array1<f64>,
    pub target_velocity: Array2<f64>,
}

/// Draws `(x_t, t, z - (1-σ)x0)` with `t ~ U[0,1)`, `x0 ~ logistic^d`,
/// `z ~ target`.
pub fn sample_cfm_batch(
    target: &Target,
    path: &PathSpec,
    batch_size: usize,
    rng: &mut ChaCha20Rng,
) -> Result<CfmBatch> {
    path.validate()?;
    let d = target.d;
    let z = target.sample_with_rng(batch_size, rng);
    let mut t = Array1::zeros(batch_size);
    let mut x0 = Array2::zeros((batch_size, d));
    for i in 0..batch_size {
        t[i] = rng.random::<f64>();
        for j in 0..d {
            let mut u: f64 = rng.random();
            while u == 0.0 {
                u = rng.random();
            }
            x0[[i, j]] = logit_scalar(u);
        }
    }
    let one_minus_sigma = 1.0 - path.sigma;
    let mut x = Array2::zeros((batch_size, d));
    let mut v = Array2::zeros((batch_size, d));
    for i in 0..batch_size {
        let scale = 1.0 - one_minus_sigma * t[i];
        for j in 0..d {
            x[[i, j]] = scale * x0[[i, j]] + t[i] * z[[i, j]];
            v[[i, j]] = z[[i, j]] - one_minus_sigma * x0[[i, j]];
        }
    }
    Ok(CfmBatch { x, t, target_velocity: v })
}

struct Adam {
    m: Tensors,
    v: Tensors,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    lr: f64,
    step: usize,
}

impl Adam {
    fn new(cfg: &TrainConfig, shape: &crate::field::FieldShape) -> Self {
        Self {
            m: Tensors::zeros(shape),
            v: Tensors::zeros(shape),
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            lr: cfg.learning_rate,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut Tensors, grad: &Tensors) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut ps = params.slices_mut();
        let gs = grad.slices();
        let mut ms = self.m.slices_mut();
        let mut vs = self.v.slices_mut();
        for t in 0..ps.len() {
            let (p, g, m, v) = (&mut ps[t], gs[t], &mut ms[t], &mut vs[t]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Runs Adam on the CFM loss over freshly sampled batches. Returns the
/// final parameters and the per-step loss trace. Deterministic in
/// `config.seed`; any non-finite loss aborts with the step index.
pub fn train(config: &TrainConfig, target: &Target) -> Result<(VelocityParams, Vec<f64>)> {
    config.validate()?;
    let d = target.d;
    let (width, n_blocks, k_freqs) = config.arch.resolve(d);
    let mut params = init_params(d, width, n_blocks, k_freqs, config.seed)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed.wrapping_add(0x5eed_cf11));
    let mut adam = Adam::new(config, &params.shape);
    let mut trace = Vec::with_capacity(config.n_steps);

    for step in 1..=config.n_steps {
        let batch = sample_cfm_batch(target, &config.path, config.batch_size, &mut rng)?;
        let (loss, grad) = grad_params(
            &params,
            batch.x.view(),
            batch.t.view(),
            batch.target_velocity.view(),
        )?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, what: format!("loss = {loss}") });
        }
        adam.update(&mut params.tensors, &grad);
        if !params.tensors.all_finite() {
            return Err(Error::TrainingDiverged { step, what: "non-finite parameter".into() });
        }
        trace.push(loss);

        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
            if let Some(path) = &config.checkpoint_path {
                let meta = TrainMeta {
                    target_id: Some(target.id.clone()),
                    seed: Some(config.seed),
                    n_steps: Some(step),
                    final_loss: Some(loss),
                };
                save_checkpoint(&params, &meta, path)?;
            }
        }
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{make_gmm2d, make_logistic};
    use approx::assert_relative_eq;

    fn small_cfg(target_id: &str, steps: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 256,
            n_steps: steps,
            target_id: target_id.into(),
            arch: ArchConfig { width: Some(24), n_blocks: Some(1), k_freqs: Some(4) },
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn path_endpoints_and_velocity_identity() {
        let t = make_logistic(2);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let path = PathSpec { sigma: 0.0 };
        let b = sample_cfm_batch(&t, &path, 64, &mut rng).unwrap();
        for i in 0..64 {
            let ti = b.t[i];
            for j in 0..2 {
                // reconstruct x0, z from (x_t, v): v = z - x0, x_t = (1-t)x0 + tz
                let x0 = b.x[[i, j]] - b.t[i] * b.target_velocity[[i, j]];
                let z = b.target_velocity[[i, j]] + x0;
                // on-path conditional velocity (z - x_t)/(1 - t) equals z - x0
                if ti < 0.999 {
                    let cond = (z - b.x[[i, j]]) / (1.0 - ti);
                    assert_relative_eq!(cond, z - x0, max_relative = 1e-9, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic_in_seed() {
        let t = make_gmm2d();
        let cfg = small_cfg("gmm2d", 5);
        let (p1, tr1) = train(&cfg, &t).unwrap();
        let (p2, tr2) = train(&cfg, &t).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(tr1, tr2);
    }

    #[test]
    fn loss_decreases_on_gmm2d() {
        let t = make_gmm2d();
        let cfg = small_cfg("gmm2d", 1200);
        let (_, trace) = train(&cfg, &t).unwrap();
        // smoothed over 100-step windows, non-increasing by more than 10%
        // after the first 10% of steps
        let window = |lo: usize| -> f64 { trace[lo..lo + 100].iter().sum::<f64>() / 100.0 };
        let early = window(120);
        let late = window(trace.len() - 100);
        assert!(
            late <= early * 1.1,
            "late loss {late} should not exceed early loss {early} by >10%"
        );
        // and the final loss beats the naive constant-predictor floor
        // E||z - x0||^2 = Var(z) + Var(x0) per coordinate, summed.
        let var_logistic = std::f64::consts::PI.powi(2) / 3.0;
        let (v1, v2) = {
            let m = t.moments();
            (m[0].1 - m[0].0 * m[0].0, m[1].1 - m[1].0 * m[1].0)
        };
        let naive = v1 + v2 + 2.0 * var_logistic;
        assert!(late < naive, "trained loss {late} vs naive floor {naive}");
    }

    #[test]
    fn divergent_learning_rate_errors_with_step_index() {
        let t = make_gmm2d();
        let mut cfg = small_cfg("gmm2d", 50);
        cfg.learning_rate = 1e200;
        match train(&cfg, &t) {
            Err(Error::TrainingDiverged { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn self_target_transport_is_near_identity() {
        // For pi = p0 the optimal transport is the identity map. (The
        // pointwise-optimal field is not the zero field under the
        // independent coupling, but the composed flow must still push the
        // prior onto itself.) Train briefly, then check pushed moments.
        let t = make_logistic(1);
        let cfg = TrainConfig {
            batch_size: 256,
            n_steps: 1500,
            target_id: "logistic".into(),
            arch: ArchConfig { width: Some(24), n_blocks: Some(1), k_freqs: Some(4) },
            seed: 3,
            ..Default::default()
        };
        let (p, trace) = train(&cfg, &t).unwrap();
        let tail: f64 = trace[trace.len() - 100..].iter().sum::<f64>() / 100.0;
        let naive = 2.0 * std::f64::consts::PI.powi(2) / 3.0;
        assert!(tail < naive, "loss {tail} vs naive {naive}");

        let spec = crate::transport::FlowSpec::default();
        let ps = crate::qmc::randomize(
            &crate::qmc::sobol_points(1, 12).unwrap(),
            &crate::qmc::RandomizationSpec::owen(5),
        );
        let mut vals = Vec::new();
        for row in ps.points().rows() {
            let s = crate::transport::push_forward(&p, row.as_slice().unwrap(), &spec).unwrap();
            vals.push(s.x[0]);
        }
        let mean = crate::stats::mean(&vals);
        let var = crate::stats::variance(&vals);
        let want_var = std::f64::consts::PI.powi(2) / 3.0;
        assert!(mean.abs() < 0.15, "pushed mean {mean}");
        assert!((var - want_var).abs() / want_var < 0.15, "pushed var {var} vs {want_var}");
    }
}
