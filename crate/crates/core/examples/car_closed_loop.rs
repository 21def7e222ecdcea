//! Receding-horizon overtaking manoeuvre with the bicycle model.
//!
//! `cargo run --release --example car_closed_loop -- [out_dir]`

use std::path::PathBuf;

use gpmpc::experiments::{cmd_closed_loop, Experiment, ExperimentConfig};

fn main() -> gpmpc::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| PathBuf::from("out/car"), PathBuf::from);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/car.toml");
    let exp = Experiment::build(ExperimentConfig::load(path.as_ref())?)?;
    let rep = cmd_closed_loop(&exp, &out)?;
    let x = &rep.final_state;
    println!("{} steps, final position ({:.2}, {:.2}), speed {:.2}", rep.steps, x[0], x[1], x[3]);
    println!("max state violation {:.2e}, max input violation {:.2e}", rep.max_state_violation, rep.max_input_violation);
    println!("steps above tolerance: {:?}", rep.violating_steps);
    println!("memory bound {} rows respected: {}", rep.memory_bound, rep.memory_bound_respected);
    println!("outputs in {}", out.display());
    Ok(())
}
