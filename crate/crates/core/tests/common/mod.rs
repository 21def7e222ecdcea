#![allow(dead_code)]

pub mod qp;

use std::path::PathBuf;

use gpmpc::experiments::ExperimentConfig;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

pub fn shipped(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).expect("shipped config loads")
}

/// Pendulum config shrunk to a few stages and samples.
pub fn small_pendulum() -> ExperimentConfig {
    let mut c = shipped("pendulum.toml");
    c.ocp.horizon = 6;
    c.ocp.samples = 3;
    c.propagate.monte_carlo = 30;
    c.propagate.sqp_iterations = 2;
    c.mpc.steps = 3;
    c.bench.samples = vec![1, 2];
    c.bench.iterations = vec![1, 2];
    c.bench.repeats = 1;
    c.bench.steps = 2;
    c
}

/// Car config shrunk to a few stages and samples.
pub fn small_car() -> ExperimentConfig {
    let mut c = shipped("car.toml");
    c.ocp.horizon = 5;
    c.ocp.samples = 3;
    c.mpc.steps = 4;
    c
}
