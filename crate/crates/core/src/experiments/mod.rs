//! Config-driven experiments behind the command-line tool.

mod commands;
mod config;
pub mod csv_io;
pub mod svg;

pub use commands::{
    closed_loop_svg, cmd_bench, cmd_closed_loop, cmd_propagate, run_closed_loop_experiment, run_propagation,
    ClosedLoopReport, PropagateReport, PropagationResult, HULL_TOL,
};
pub use config::{
    sub_seed, BenchConfig, Experiment, ExperimentConfig, GpConfig, OcpConfig, PropagateConfig, Stream, SystemKind,
};
