use fmqmc::estimators::{base_points, PointKind};
use fmqmc::field::init_params;
use fmqmc::transport::{push_forward_batch, FlowSpec, Scheme};
use std::time::Instant;

fn main() {
    for (d, w, nb, steps, n) in [
        (2usize, 48usize, 2usize, 12usize, 8192usize),
        (2, 64, 2, 16, 8192),
        (30, 48, 2, 8, 2048),
        (30, 64, 2, 8, 2048),
    ] {
        let p = init_params(d, w, nb, 8, 1).unwrap();
        let (u, _) = base_points(PointKind::Qmc, n, d, 7).unwrap();
        let spec = FlowSpec { scheme: Scheme::Heun, n_ode_steps: steps, ..Default::default() };
        let t0 = Instant::now();
        let s = push_forward_batch(&p, u.view(), &spec).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let per_point = dt / n as f64;
        // rough flop count: heun = 2 evals of (1+d) * value_cost, value ~ 2*(2*nb*w^2)
        let value_flops = 2.0 * (2.0 * nb as f64 * w as f64 * w as f64 + w as f64 * (d as f64 + 16.0 + d as f64));
        let flops = n as f64 * steps as f64 * 2.0 * (1.0 + d as f64) * value_flops;
        println!(
            "d={d} w={w} steps={steps}: {n} pts in {dt:.2}s ({:.1} us/pt, ~{:.2} GFLOP/s) ld0={:.3}",
            per_point * 1e6,
            flops / dt / 1e9,
            s[0].log_abs_det
        );
    }
}
