//! Open-loop sampling-based SQP on the pendulum swing-up.
//!
//! `cargo run --release --example pendulum_sqp -- [samples] [iterations]`

use gpmpc::experiments::{Experiment, ExperimentConfig};
use gpmpc::sqp::{run_sqp, verify_corollary1, SqpIterate};

fn main() -> gpmpc::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let l: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/pendulum.toml");
    let exp = Experiment::build(ExperimentConfig::load(path.as_ref())?)?.with_samples(n);

    let mut it = SqpIterate::new(&exp.ocp, exp.model.clone(), &exp.x0, exp.u_guess.clone(), exp.sampling_seed())?;
    println!("iter  |du|        cost        max slack  qp iters");
    for d in run_sqp(&mut it, &exp.ocp, l)? {
        println!(
            "{:>4}  {:.3e}  {:>10.3}  {:.2e}   {}",
            d.iteration, d.du_norm, d.cost, d.max_slack, d.qp_iterations
        );
    }
    let dev = verify_corollary1(&it, &exp.ocp)?;
    println!("largest re-simulation deviation {:.2e}", dev.iter().fold(0.0f64, |a, b| a.max(*b)));
    let last = it.x.iter().map(|xs| xs[xs.len() - 1][0]).fold(f64::NAN, f64::max);
    println!("largest final angle over samples {last:.3}");
    Ok(())
}
