//! Per-step solve time of the car controller over sample and iteration
//! counts. Set `GPMPC_THREADS` to size the worker pool.

use gpmpc::experiments::{cmd_bench, csv_io::timing_table, Experiment, ExperimentConfig};

fn main() -> gpmpc::Result<()> {
    if let Some(n) = std::env::var("GPMPC_THREADS").ok().and_then(|v| v.parse().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/car.toml");
    let exp = Experiment::build(ExperimentConfig::load(path.as_ref())?)?;
    let rows = cmd_bench(&exp, &[5, 10, 20], &[1, 2, 3], 1, None)?;
    print!("{}", timing_table(&rows));
    Ok(())
}
