//! Sample hulls, Monte-Carlo envelope and linearized ellipsoids for the
//! pendulum under one optimized input sequence. Writes CSV, SVG and JSON.
//!
//! `cargo run --release --example uncertainty_propagation -- [out_dir]`

use std::path::PathBuf;

use gpmpc::experiments::{cmd_propagate, Experiment, ExperimentConfig};

fn main() -> gpmpc::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| PathBuf::from("out/propagate"), PathBuf::from);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/pendulum.toml");
    let exp = Experiment::build(ExperimentConfig::load(path.as_ref())?)?;
    let rep = cmd_propagate(&exp, &out)?;
    println!("{} samples, {} Monte-Carlo trajectories", rep.samples, rep.monte_carlo);
    println!("min hull coverage of Monte-Carlo points {:.1}%", 100.0 * rep.min_coverage);
    println!(
        "true trajectory inside the envelope at {}/{} stages",
        rep.truth_contained.iter().filter(|b| **b).count(),
        rep.truth_contained.len()
    );
    println!(
        "final-stage area: linearized {:.3e}, Monte-Carlo {:.3e}",
        rep.linearized_final_area, rep.monte_carlo_final_area
    );
    println!("outputs in {}", out.display());
    Ok(())
}
