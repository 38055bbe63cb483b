use fmqmc::field::VelocityParams;
use fmqmc::growth::*;
use fmqmc::transport::{FlowSpec, LogdetMode, Scheme};
fn main() {
    let mut p = VelocityParams::zero(1, 8, 1, 2);
    p.tensors.b_o[0] = 0.8;
    let ladder = ProbeLadder::new(1, 0, 5);
    let spec = FlowSpec { scheme: Scheme::Euler, n_ode_steps: 8, logdet_mode: LogdetMode::Exact };
    let sect = check_value_growth(&p, &spec, &ladder).unwrap();
    println!("{}", serde_json::to_string_pretty(&sect).unwrap());
}
