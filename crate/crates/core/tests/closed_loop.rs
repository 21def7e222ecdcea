mod common;

use gpmpc::experiments::csv_io::{read_trace, write_trace, TraceRow};
use gpmpc::experiments::{run_closed_loop_experiment, Experiment};
use gpmpc::mpc::{timing_report, MpcConfig};
use gpmpc::Error;

#[test]
fn single_step_gives_one_row() {
    let exp = Experiment::build(common::small_car()).unwrap();
    let cfg = MpcConfig {
        steps: 1,
        ..exp.config.mpc.clone()
    };
    let trace = run_closed_loop_experiment(&exp, &cfg).unwrap();
    assert_eq!(trace.steps.len(), 1);
    let mut buf = Vec::new();
    write_trace(&mut buf, &trace).unwrap();
    let rows = read_trace(&buf[..]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].x, exp.config.ocp.x0);
}

#[test]
fn memory_stays_within_the_bound() {
    let exp = Experiment::build(common::small_car()).unwrap();
    for (l, keep) in [(1, 1), (2, 1), (3, 2)] {
        let cfg = MpcConfig {
            iterations: l,
            keep,
            steps: 4,
            ..MpcConfig::default()
        };
        let trace = run_closed_loop_experiment(&exp, &cfg).unwrap();
        assert!(trace.aborted.is_none());
        assert!(trace.memory_bound_respected(), "L = {l}, keep = {keep}");
        assert!(trace.steps.iter().all(|s| s.peak_rows <= trace.memory_bound));
    }
}

fn without_timing(rows: Vec<TraceRow>) -> Vec<TraceRow> {
    rows.into_iter()
        .map(|r| TraceRow {
            prepare_ms: 0.0,
            feedback_ms: 0.0,
            total_ms: 0.0,
            ..r
        })
        .collect()
}

#[test]
fn runs_are_bit_identical_apart_from_timing() {
    let exp = Experiment::build(common::small_car()).unwrap();
    let csv = || {
        let trace = run_closed_loop_experiment(&exp, &exp.config.mpc).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        without_timing(read_trace(&buf[..]).unwrap())
    };
    let (a, b) = (csv(), csv());
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), rb.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(ra.u.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), rb.u.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    assert_eq!(a, b);
}

#[test]
fn timing_rows_pool_traces() {
    let exp = Experiment::build(common::small_car()).unwrap();
    let cfg = MpcConfig {
        steps: 3,
        ..exp.config.mpc.clone()
    };
    let t1 = run_closed_loop_experiment(&exp, &cfg).unwrap();
    let t2 = run_closed_loop_experiment(&exp, &cfg).unwrap();
    let rows = timing_report(&[(3, 2, &t1), (3, 2, &t2)]);
    assert_eq!(rows.len(), 1);
    // the first step of each trace is warm-up
    assert_eq!(rows[0].steps, 4);
    assert!(rows[0].total_mean_ms >= rows[0].feedback_mean_ms);
}

#[test]
fn invalid_memory_settings_are_config_errors() {
    let bad = [
        MpcConfig {
            iterations: 0,
            ..MpcConfig::default()
        },
        MpcConfig {
            iterations: 1,
            keep: 2,
            ..MpcConfig::default()
        },
        MpcConfig {
            steps: 0,
            ..MpcConfig::default()
        },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
    }
}
