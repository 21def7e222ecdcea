use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::{sub_seed, Experiment, Stream};
use super::csv_io::{timing_table, write_geometry, write_predictions, write_timing, write_trace, GeometryRow};
use super::svg::Plot;
use crate::baselines::{convex_hull, coverage, hull_contains, linearized_propagation, monte_carlo_envelope, polygon_area, project, EllipsoidStage};
use crate::error::{Error, Result};
use crate::mpc::{run_closed_loop, timing_report, ClosedLoopTrace, MpcConfig, TimingRow};
use crate::sqp::{run_sqp, simulate_sample, verify_corollary1, IterationDiagnostics, SqpIterate};

/// Tolerance for point-in-hull tests, absolute in plot units.
pub const HULL_TOL: f64 = 1e-9;

/// Everything the uncertainty comparison computes, under one input sequence.
#[derive(Clone, Debug)]
pub struct PropagationResult {
    pub u: Vec<DVector<f64>>,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// Per-sample deviation between iterate and forward simulation.
    pub corollary: Vec<f64>,
    /// Forward simulations of the N optimizer samples, `[n][i]`.
    pub samples: Vec<Vec<DVector<f64>>>,
    pub monte_carlo: Vec<Vec<DVector<f64>>>,
    pub ellipsoids: Vec<EllipsoidStage>,
    pub truth: Vec<DVector<f64>>,
    pub dims: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagateReport {
    pub stages: usize,
    pub samples: usize,
    pub monte_carlo: usize,
    pub final_step_norm: f64,
    pub max_corollary_deviation: f64,
    /// Fraction of Monte-Carlo points inside the N-sample hull, per stage.
    pub coverage: Vec<f64>,
    pub min_coverage: f64,
    /// Whether the true state lies in the Monte-Carlo hull, per stage.
    pub truth_contained: Vec<bool>,
    pub linearized_final_area: f64,
    pub monte_carlo_final_area: f64,
}

/// Optimizes `u` with the configured sample count, then propagates the
/// uncertainty under `u` with every method.
pub fn run_propagation(exp: &Experiment) -> Result<PropagationResult> {
    let cfg = &exp.config;
    let sys = &exp.ocp.system;
    let mut it = SqpIterate::new(&exp.ocp, exp.model.clone(), &exp.x0, exp.u_guess.clone(), exp.sampling_seed())?;
    let diagnostics = run_sqp(&mut it, &exp.ocp, cfg.propagate.sqp_iterations)?;
    let corollary = verify_corollary1(&it, &exp.ocp)?;
    let u = it.u.clone();
    let samples = it
        .samples
        .iter()
        .map(|s| simulate_sample(sys, &mut s.clone(), &exp.x0, &u).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let monte_carlo = monte_carlo_envelope(
        sys,
        &exp.model,
        &exp.x0,
        &u,
        cfg.propagate.monte_carlo,
        sub_seed(cfg.seed, Stream::MonteCarlo),
    )?;
    let ellipsoids = linearized_propagation(sys, &exp.model, &exp.x0, &u, cfg.sampler.confidence.sqrt_beta)?;
    let mut truth = vec![exp.x0.clone()];
    for ui in &u {
        let next = exp.bench.plant.step(truth.last().unwrap(), ui);
        truth.push(next);
    }
    Ok(PropagationResult {
        u,
        diagnostics,
        corollary,
        samples,
        monte_carlo,
        ellipsoids,
        truth,
        dims: cfg.propagate.plot_dims,
    })
}

impl PropagationResult {
    pub fn stages(&self) -> usize {
        self.truth.len()
    }

    pub fn sample_hull(&self, stage: usize) -> Vec<[f64; 2]> {
        convex_hull(&project(&self.samples, stage, self.dims))
    }

    pub fn monte_carlo_hull(&self, stage: usize) -> Vec<[f64; 2]> {
        convex_hull(&project(&self.monte_carlo, stage, self.dims))
    }

    fn truth_point(&self, stage: usize) -> [f64; 2] {
        [self.truth[stage][self.dims[0]], self.truth[stage][self.dims[1]]]
    }

    pub fn report(&self) -> PropagateReport {
        let n = self.stages();
        let coverage: Vec<f64> = (0..n)
            .map(|i| coverage(&self.sample_hull(i), &project(&self.monte_carlo, i, self.dims), HULL_TOL))
            .collect();
        let truth_contained = (0..n)
            .map(|i| hull_contains(&self.monte_carlo_hull(i), self.truth_point(i), HULL_TOL))
            .collect();
        PropagateReport {
            stages: n,
            samples: self.samples.len(),
            monte_carlo: self.monte_carlo.len(),
            final_step_norm: self.diagnostics.last().map_or(f64::NAN, |d| d.du_norm.max(d.dx_norm)),
            max_corollary_deviation: self.corollary.iter().copied().fold(0.0, f64::max),
            min_coverage: coverage.iter().copied().fold(1.0, f64::min),
            coverage,
            truth_contained,
            linearized_final_area: self.ellipsoids[n - 1].area(self.dims),
            monte_carlo_final_area: polygon_area(&self.monte_carlo_hull(n - 1)),
        }
    }

    /// Rows for methods `mc`, `linearized`, `hulls` and `true`.
    pub fn geometry_rows(&self) -> Vec<GeometryRow> {
        let mut rows = Vec::new();
        let mut push = |method: &str, stage: usize, pts: &[[f64; 2]]| {
            for (v, p) in pts.iter().enumerate() {
                rows.push(GeometryRow {
                    method: method.into(),
                    stage,
                    vertex: v,
                    x: p[0],
                    y: p[1],
                });
            }
        };
        for i in 0..self.stages() {
            push("mc", i, &self.monte_carlo_hull(i));
            push("linearized", i, &self.ellipsoids[i].boundary(self.dims, 48));
            push("hulls", i, &self.sample_hull(i));
            push("true", i, &[self.truth_point(i)]);
        }
        rows
    }

    pub fn svg(&self) -> String {
        let all: Vec<[f64; 2]> = (0..self.stages()).flat_map(|i| self.monte_carlo_hull(i)).collect();
        let mut plot = Plot::fit(all.iter(), 0.08, 900.0, 600.0);
        plot.title("uncertainty propagation: Monte-Carlo (blue), linearized (orange), sample hulls (green), true (black)");
        for i in 0..self.stages() {
            plot.polygon(&self.monte_carlo_hull(i), "#4a7bd0", 0.25, "none");
        }
        for i in 0..self.stages() {
            plot.polygon(&self.sample_hull(i), "#3a9a3a", 0.35, "#2a7a2a");
        }
        for e in &self.ellipsoids {
            plot.polyline(&close(e.boundary(self.dims, 48)), "#e08020", 1.0, 0.9);
        }
        let truth: Vec<[f64; 2]> = (0..self.stages()).map(|i| self.truth_point(i)).collect();
        plot.polyline(&truth, "black", 1.5, 1.0);
        plot.finish()
    }
}

fn close(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    if let Some(p) = pts.first().copied() {
        pts.push(p);
    }
    pts
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

/// Writes `propagate.csv`, `propagate.svg` and `propagate.json` to `out`.
pub fn cmd_propagate(exp: &Experiment, out: &Path) -> Result<PropagateReport> {
    let res = run_propagation(exp)?;
    let report = res.report();
    write_geometry(create(out, "propagate.csv")?, &res.geometry_rows())?;
    fs::write(out.join("propagate.svg"), res.svg())?;
    write_json(out, "propagate.json", &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub steps: usize,
    pub final_state: Vec<f64>,
    pub max_state_violation: f64,
    pub max_input_violation: f64,
    pub max_predicted_violation: f64,
    /// Steps whose measured state violates a constraint by more than 1e-6.
    pub violating_steps: Vec<usize>,
    pub memory_bound: usize,
    pub memory_bound_respected: bool,
    pub aborted: Option<String>,
}

impl ClosedLoopReport {
    pub fn from_trace(trace: &ClosedLoopTrace) -> Self {
        Self {
            steps: trace.steps.len(),
            final_state: trace.final_state.clone(),
            max_state_violation: trace.max_state_violation(),
            max_input_violation: trace.max_input_violation(),
            max_predicted_violation: trace.max_predicted_violation(),
            violating_steps: trace
                .steps
                .iter()
                .filter(|s| s.state_violation.max(s.input_violation) > 1e-6)
                .map(|s| s.k)
                .collect(),
            memory_bound: trace.memory_bound,
            memory_bound_respected: trace.memory_bound_respected(),
            aborted: trace.aborted.clone(),
        }
    }
}

pub fn run_closed_loop_experiment(exp: &Experiment, mpc: &MpcConfig) -> Result<ClosedLoopTrace> {
    run_closed_loop(
        &exp.ocp,
        exp.model.clone(),
        &exp.bench.plant,
        mpc,
        &exp.x0,
        exp.u_guess.clone(),
        exp.sampling_seed(),
    )
}

/// Writes `closed_loop.csv`, `predictions.csv`, `closed_loop.svg` and
/// `violations.json` to `out`. An aborted run still writes its partial
/// trace and then returns [`Error::Aborted`].
pub fn cmd_closed_loop(exp: &Experiment, out: &Path) -> Result<ClosedLoopReport> {
    let trace = run_closed_loop_experiment(exp, &exp.config.mpc)?;
    write_trace(create(out, "closed_loop.csv")?, &trace)?;
    write_predictions(create(out, "predictions.csv")?, &trace)?;
    fs::write(out.join("closed_loop.svg"), closed_loop_svg(exp, &trace))?;
    let report = ClosedLoopReport::from_trace(&trace);
    write_json(out, "violations.json", &report)?;
    match &trace.aborted {
        Some(msg) => Err(Error::Aborted {
            step: trace.steps.len(),
            message: msg.clone(),
        }),
        None => Ok(report),
    }
}

/// Closed-loop path with track bounds, obstacles and sample fans, in the
/// first two state coordinates.
pub fn closed_loop_svg(exp: &Experiment, trace: &ClosedLoopTrace) -> String {
    let path: Vec<[f64; 2]> = trace.states().iter().map(|x| [x[0], x[1]]).collect();
    let cons = &exp.ocp.system.constraints;
    let mut extent = path.clone();
    for s in &trace.steps {
        for traj in &s.predictions {
            extent.extend(traj.iter().map(|x| [x[0], x[1]]));
        }
    }
    let finite = |v: f64, alt: f64| if v.is_finite() { v } else { alt };
    let (xmin, xmax) = extent.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p[0]), a.1.max(p[0])));
    let (ymin, ymax) = extent.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p[1]), a.1.max(p[1])));
    let lo = [finite(cons.state_lower[0], xmin), finite(cons.state_lower[1], ymin)];
    let hi = [finite(cons.state_upper[0], xmax), finite(cons.state_upper[1], ymax)];
    extent.extend([lo, hi]);
    let mut plot = Plot::fit(extent.iter(), 0.03, 1200.0, 400.0);
    plot.title(&format!("{} closed loop: path (black), sample predictions (blue)", exp.ocp.system.name));
    plot.rect(lo, hi, "#555");
    for e in &cons.obstacles {
        let [a, b] = e.semi_axes();
        let pts: Vec<[f64; 2]> = (0..=64)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
                [e.center[0] + a * t.cos(), e.center[1] + b * t.sin()]
            })
            .collect();
        plot.polygon(&pts, "#d04040", 0.3, "#a02020");
    }
    for s in &trace.steps {
        for traj in &s.predictions {
            let pts: Vec<[f64; 2]> = traj.iter().map(|x| [x[0], x[1]]).collect();
            plot.polyline(&pts, "#4a7bd0", 0.5, 0.25);
        }
    }
    plot.polyline(&path, "black", 2.0, 1.0);
    for p in &path {
        plot.circle(*p, 2.0, "black");
    }
    plot.finish()
}

/// Times the closed loop for every `(N, L)` with `repeats` runs each.
/// Writes `bench.csv` and `bench.md` to `out` when given.
pub fn cmd_bench(
    exp: &Experiment,
    samples: &[usize],
    iterations: &[usize],
    repeats: usize,
    out: Option<&Path>,
) -> Result<Vec<TimingRow>> {
    if samples.is_empty() || iterations.is_empty() || repeats == 0 {
        return Err(Error::Config("bench needs sample counts, iteration counts and repeats".into()));
    }
    let mut traces = Vec::new();
    for &n in samples {
        let e = exp.with_samples(n);
        for &l in iterations {
            let mpc = MpcConfig {
                iterations: l,
                keep: exp.config.mpc.keep.min(l),
                steps: exp.config.bench.steps,
                shift_warm_start: true,
                record_predictions: false,
            };
            for r in 0..repeats {
                let mut er = e.clone();
                er.config.seed = sub_seed(exp.config.seed, Stream::Trials).wrapping_add(r as u64);
                let trace = run_closed_loop_experiment(&er, &mpc)?;
                if let Some(msg) = &trace.aborted {
                    return Err(Error::Aborted {
                        step: trace.steps.len(),
                        message: msg.clone(),
                    });
                }
                log::info!("bench N={n} L={l} repeat {r}: {} steps", trace.steps.len());
                traces.push((n, l, trace));
            }
        }
    }
    let refs: Vec<(usize, usize, &ClosedLoopTrace)> = traces.iter().map(|(n, l, t)| (*n, *l, t)).collect();
    let rows = timing_report(&refs);
    if let Some(dir) = out {
        write_timing(create(dir, "bench.csv")?, &rows)?;
        fs::write(dir.join("bench.md"), timing_table(&rows))?;
    }
    Ok(rows)
}
