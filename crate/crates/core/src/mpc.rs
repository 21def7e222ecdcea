//! Real-time-iteration MPC loop on a plant.
//!
//! At every step `k` the measured state pins `x^n_0`, the controller runs
//! `L` preparation/feedback rounds, and `u_0` from the first feedback phase
//! goes to the plant. Each sample keeps its base data plus the sampled rows
//! of its last `keep` rounds.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::Plant;
use crate::error::{Error, Result};
use crate::sampler::GpModel;
use crate::sqp::{check_open_loop_feasibility, feedback_ocp, prepare, OcpDefinition, SqpIterate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// SQP rounds per step (`L`).
    pub iterations: usize,
    /// Rounds of sampled rows kept between steps (`L~`).
    pub keep: usize,
    pub steps: usize,
    pub shift_warm_start: bool,
    /// Keep every sample's predicted trajectory in the trace.
    pub record_predictions: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            iterations: 1,
            keep: 1,
            steps: 50,
            shift_warm_start: true,
            record_predictions: true,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("mpc.iterations must be at least 1".into()));
        }
        if self.keep > self.iterations {
            return Err(Error::Config("mpc.keep must not exceed mpc.iterations".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("mpc.steps must be at least 1".into()));
        }
        Ok(())
    }

    /// `|D~| + (keep + L) H (n_z + 1)` per output dimension.
    pub fn memory_bound(&self, base_rows: usize, horizon: usize, n_z: usize) -> usize {
        base_rows + (self.keep + self.iterations) * horizon * (n_z + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// Largest state-constraint value of the measured state.
    pub state_violation: f64,
    pub input_violation: f64,
    /// Largest constraint value over the sampled predictions after the last
    /// round of this step.
    pub predicted_violation: f64,
    pub max_slack: f64,
    pub qp_converged: bool,
    pub clamped: bool,
    pub acceptance_rate: f64,
    /// Peak conditioning rows of any sample during the step.
    pub peak_rows: usize,
    pub prepare_ms: f64,
    pub feedback_ms: f64,
    pub total_ms: f64,
    /// `predictions[n][i]`, empty unless recorded.
    #[serde(skip)]
    pub predictions: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrace {
    pub steps: Vec<StepRecord>,
    /// State after the last step.
    pub final_state: Vec<f64>,
    pub memory_bound: usize,
    /// Set when the loop stopped on an error; `steps` holds what was done.
    pub aborted: Option<String>,
}

impl ClosedLoopTrace {
    pub fn states(&self) -> Vec<Vec<f64>> {
        let mut xs: Vec<_> = self.steps.iter().map(|s| s.x.clone()).collect();
        if !self.final_state.is_empty() {
            xs.push(self.final_state.clone());
        }
        xs
    }

    pub fn max_state_violation(&self) -> f64 {
        self.steps.iter().map(|s| s.state_violation).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_input_violation(&self) -> f64 {
        self.steps.iter().map(|s| s.input_violation).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_predicted_violation(&self) -> f64 {
        self.steps.iter().map(|s| s.predicted_violation).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn memory_bound_respected(&self) -> bool {
        self.steps.iter().all(|s| s.peak_rows <= self.memory_bound)
    }
}

/// Shifts inputs and per-sample states one stage forward, repeating the
/// last entry.
pub fn shift_warm_start(it: &mut SqpIterate) {
    if !it.u.is_empty() {
        it.u.rotate_left(1);
        let n = it.u.len();
        it.u[n - 1] = it.u[n.saturating_sub(2)].clone();
    }
    for xs in &mut it.x {
        xs.rotate_left(1);
        let n = xs.len();
        xs[n - 1] = xs[n.saturating_sub(2)].clone();
    }
}

/// Runs the loop from `x0` with the initial input guess `u0`. Errors in the
/// setup are returned; errors during the run end it early with
/// `aborted` set.
pub fn run_closed_loop(
    ocp: &OcpDefinition,
    model: Arc<GpModel>,
    plant: &Plant,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
    u0: Vec<DVector<f64>>,
    seed: u64,
) -> Result<ClosedLoopTrace> {
    cfg.validate()?;
    let mut it = SqpIterate::new(ocp, model.clone(), x0, u0, seed)?;
    let mut trace = ClosedLoopTrace {
        memory_bound: cfg.memory_bound(model.base_rows(), ocp.horizon, ocp.system.n_z()),
        ..Default::default()
    };
    let mut x = x0.clone();
    for k in 0..cfg.steps {
        match closed_loop_step(ocp, plant, cfg, &mut it, &x, k) {
            Ok((rec, next)) => {
                trace.steps.push(rec);
                x = next;
            }
            Err(e) => {
                log::error!("closed loop aborted at step {k}: {e}");
                trace.aborted = Some(e.to_string());
                break;
            }
        }
    }
    trace.final_state = x.as_slice().to_vec();
    Ok(trace)
}

fn closed_loop_step(
    ocp: &OcpDefinition,
    plant: &Plant,
    cfg: &MpcConfig,
    it: &mut SqpIterate,
    x: &DVector<f64>,
    k: usize,
) -> Result<(StepRecord, DVector<f64>)> {
    let start = Instant::now();
    it.pin_initial_state(x);
    let mut applied = None;
    let (mut prep_ms, mut fb_ms) = (0.0, 0.0);
    let mut peak_rows = 0;
    let mut max_slack = 0.0f64;
    let mut converged = true;
    let mut clamped = false;
    let (mut acc, mut att) = (0u64, 0u64);
    for _ in 0..cfg.iterations {
        let t0 = Instant::now();
        let lin = prepare(it, ocp)?;
        let t1 = Instant::now();
        let fb = feedback_ocp(it, &lin, ocp)?;
        let t2 = Instant::now();
        if applied.is_none() {
            applied = Some(it.u[0].clone());
            prep_ms = (t1 - t0).as_secs_f64() * 1e3;
            fb_ms = (t2 - t1).as_secs_f64() * 1e3;
        }
        peak_rows = peak_rows.max(it.samples.iter().map(|s| s.conditioning_rows()).max().unwrap_or(0));
        max_slack = max_slack.max(fb.max_slack);
        converged &= fb.qp_status == crate::qp::QpStatus::Optimal;
        clamped |= lin.clamped;
        acc += lin.sampler.draws;
        att += lin.sampler.attempts;
    }
    let u = applied.expect("at least one iteration");
    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    let feas = check_open_loop_feasibility(it, ocp);
    let cons = &ocp.system.constraints;
    let rec = StepRecord {
        k,
        x: x.as_slice().to_vec(),
        u: u.as_slice().to_vec(),
        state_violation: cons.state_violation(x.as_slice()),
        input_violation: cons.input_violation(u.as_slice()),
        predicted_violation: feas.max_violation,
        max_slack,
        qp_converged: converged,
        clamped,
        acceptance_rate: if att == 0 { 1.0 } else { acc as f64 / att as f64 },
        peak_rows,
        prepare_ms: prep_ms,
        feedback_ms: fb_ms,
        total_ms,
        predictions: if cfg.record_predictions {
            it.x.iter().map(|xs| xs.iter().map(|v| v.as_slice().to_vec()).collect()).collect()
        } else {
            Vec::new()
        },
    };
    let next = plant.step(x, &u);
    for s in &mut it.samples {
        s.truncate_memory(cfg.keep)?;
    }
    if cfg.shift_warm_start {
        shift_warm_start(it);
    }
    Ok((rec, next))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub samples: usize,
    pub iterations: usize,
    pub steps: usize,
    /// Time from the measurement to the applied input.
    pub feedback_mean_ms: f64,
    pub feedback_std_ms: f64,
    pub total_mean_ms: f64,
    pub total_std_ms: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Mean and standard deviation of per-step times for each `(N, L)`. Runs
/// with the same `(N, L)` are pooled; each run's first step is left out when
/// it has more than one.
pub fn timing_report(runs: &[(usize, usize, &ClosedLoopTrace)]) -> Vec<TimingRow> {
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for (n, l, _) in runs {
        if !keys.contains(&(*n, *l)) {
            keys.push((*n, *l));
        }
    }
    keys.into_iter()
        .map(|(n, l)| {
            let steps: Vec<&StepRecord> = runs
                .iter()
                .filter(|r| r.0 == n && r.1 == l)
                .flat_map(|(_, _, t)| t.steps.iter().skip(usize::from(t.steps.len() > 1)))
                .collect();
            let fb: Vec<f64> = steps.iter().map(|s| s.prepare_ms + s.feedback_ms).collect();
            let total: Vec<f64> = steps.iter().map(|s| s.total_ms).collect();
            let (fm, fs) = mean_std(&fb);
            let (tm, ts) = mean_std(&total);
            TimingRow {
                samples: n,
                iterations: l,
                steps: steps.len(),
                feedback_mean_ms: fm,
                feedback_std_ms: fs,
                total_mean_ms: tm,
                total_std_ms: ts,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_skips_first_step() {
        let rec = |ms: f64| StepRecord {
            k: 0,
            x: vec![],
            u: vec![],
            state_violation: 0.0,
            input_violation: 0.0,
            predicted_violation: 0.0,
            max_slack: 0.0,
            qp_converged: true,
            clamped: false,
            acceptance_rate: 1.0,
            peak_rows: 0,
            prepare_ms: ms,
            feedback_ms: 0.0,
            total_ms: ms,
            predictions: vec![],
        };
        let t = ClosedLoopTrace {
            steps: vec![rec(100.0), rec(2.0), rec(4.0)],
            ..Default::default()
        };
        let r = timing_report(&[(5, 1, &t)]);
        assert_eq!(r[0].steps, 2);
        assert!((r[0].total_mean_ms - 3.0).abs() < 1e-12);
        assert!((r[0].total_std_ms - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn memory_bound_formula() {
        let c = MpcConfig {
            iterations: 2,
            keep: 1,
            ..Default::default()
        };
        assert_eq!(c.memory_bound(45, 16, 3), 45 + 3 * 16 * 4);
    }
}
