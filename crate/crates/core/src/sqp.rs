//! Multi-sample SQP for the sampled-dynamics optimal control problem.
//!
//! Every sample `n` carries its own state trajectory and its own
//! [`SampledDynamics`]; all samples share one input sequence. One SQP round
//! is a preparation phase (draw values and Jacobians along each sample's
//! trajectory, linearize) followed by a feedback phase (solve the QP, take
//! the full step).

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{RowKind, SystemSpec};
use crate::error::{Error, Result};
use crate::qp::{solve_condensed, LinearRows, QpProblem, QpSettings, QpStatus, StageCost, StageDynamics};
use crate::sampler::{GpModel, SampledDynamics, SamplerStats};

/// `l(x, u) = |x - x_ref|_Q^2 + |u - u_ref|_R^2`, terminal `|x - x_ref|_{Q_H}^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub x_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
}

impl QuadraticCost {
    /// Diagonal weights, no terminal cost.
    pub fn diagonal(q: &[f64], r: &[f64], x_ref: &[f64], u_ref: &[f64]) -> Self {
        Self {
            q: DMatrix::from_diagonal(&DVector::from_column_slice(q)),
            r: DMatrix::from_diagonal(&DVector::from_column_slice(r)),
            q_terminal: DMatrix::zeros(q.len(), q.len()),
            x_ref: DVector::from_column_slice(x_ref),
            u_ref: DVector::from_column_slice(u_ref),
        }
    }

    pub fn stage(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        let du = u - &self.u_ref;
        dx.dot(&(&self.q * &dx)) + du.dot(&(&self.r * &du))
    }

    pub fn terminal(&self, x: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        dx.dot(&(&self.q_terminal * &dx))
    }
}

#[derive(Clone, Debug)]
pub struct OcpDefinition {
    pub system: SystemSpec,
    pub horizon: usize,
    pub samples: usize,
    pub cost: QuadraticCost,
    /// L1 weight of the state-constraint slacks; `None` makes them hard.
    pub state_soft_weight: Option<f64>,
    pub qp: QpSettings,
}

impl OcpDefinition {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let (nx, nu) = (self.system.n_x, self.system.n_u);
        if self.horizon == 0 || self.samples == 0 {
            return Err(Error::InvalidArgument("horizon and sample count must be at least 1".into()));
        }
        let c = &self.cost;
        if c.q.shape() != (nx, nx) || c.q_terminal.shape() != (nx, nx) || c.r.shape() != (nu, nu) {
            return Err(Error::InvalidArgument("cost weights do not match the system dimensions".into()));
        }
        if c.x_ref.len() != nx || c.u_ref.len() != nu {
            return Err(Error::InvalidArgument("cost references do not match the system dimensions".into()));
        }
        if self.state_soft_weight.is_some_and(|w| !(w > 0.0)) {
            return Err(Error::InvalidArgument("soft weight must be positive".into()));
        }
        Ok(())
    }
}

/// Current solution estimate: shared inputs, one state trajectory and one
/// function sample per `n`.
#[derive(Clone, Debug)]
pub struct SqpIterate {
    /// `u[i]`, `i = 0..H`.
    pub u: Vec<DVector<f64>>,
    /// `x[n][i]`, `i = 0..=H`.
    pub x: Vec<Vec<DVector<f64>>>,
    pub samples: Vec<SampledDynamics>,
    pub iteration: usize,
}

impl SqpIterate {
    /// Fresh samples `0..N` from `seed`, states rolled out under the GP mean
    /// with the given inputs.
    pub fn new(ocp: &OcpDefinition, model: Arc<GpModel>, x0: &DVector<f64>, u: Vec<DVector<f64>>, seed: u64) -> Result<Self> {
        ocp.validate()?;
        if u.len() != ocp.horizon || u.iter().any(|v| v.len() != ocp.system.n_u) {
            return Err(Error::InvalidArgument(format!(
                "initial guess needs {} inputs of length {}",
                ocp.horizon, ocp.system.n_u
            )));
        }
        if x0.len() != ocp.system.n_x {
            return Err(Error::InvalidArgument(format!("initial state must have length {}", ocp.system.n_x)));
        }
        if model.output_dim() != ocp.system.n_g() || model.input_dim() != ocp.system.n_z() {
            return Err(Error::InvalidArgument("GP model does not match the system".into()));
        }
        let xs = mean_rollout(&ocp.system, &model, x0, &u)?;
        Ok(Self {
            x: vec![xs; ocp.samples],
            samples: (0..ocp.samples as u64).map(|n| SampledDynamics::new(model.clone(), seed, n)).collect(),
            u,
            iteration: 0,
        })
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    /// Sets `x^n_0` of every sample.
    pub fn pin_initial_state(&mut self, x0: &DVector<f64>) {
        for xs in &mut self.x {
            xs[0] = x0.clone();
        }
    }
}

/// States under the GP posterior mean dynamics.
pub fn mean_rollout(sys: &SystemSpec, model: &GpModel, x0: &DVector<f64>, u: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let mut xs = vec![x0.clone()];
    for ui in u {
        let x = xs.last().unwrap();
        let z = sys.gp_input(x.as_slice(), ui.as_slice());
        let m = model.mean_and_jacobian(&z)?;
        xs.push(sys.step_with(x, ui, &m.mean));
    }
    Ok(xs)
}

/// Constant input guess repeated over the horizon.
pub fn initial_guess(ocp: &OcpDefinition, u: &[f64]) -> Vec<DVector<f64>> {
    vec![DVector::from_column_slice(u); ocp.horizon]
}

#[derive(Clone, Debug)]
pub struct LinearizationData {
    pub qp: QpProblem,
    /// Sampled residual `g^n(x^n_i, u_i)`.
    pub g: Vec<Vec<DVector<f64>>>,
    /// `f + B_d g - x^n_{i+1}` at the iterate.
    pub defects: Vec<Vec<DVector<f64>>>,
    /// Sample-average cost of the iterate.
    pub cost: f64,
    pub sampler: SamplerStats,
    pub clamped: bool,
}

impl LinearizationData {
    pub fn max_defect(&self) -> f64 {
        self.defects.iter().flatten().map(|d| d.amax()).fold(0.0, f64::max)
    }
}

struct SampleLinearization {
    g: Vec<DVector<f64>>,
    defects: Vec<DVector<f64>>,
    dynamics: Vec<StageDynamics>,
    costs: Vec<StageCost>,
    terminal: (DMatrix<f64>, DVector<f64>),
    rows: Vec<LinearRows>,
    cost: f64,
    clamped: bool,
    outside: usize,
}

fn linearize_sample(
    ocp: &OcpDefinition,
    u: &[DVector<f64>],
    xs: &[DVector<f64>],
    sample: &mut SampledDynamics,
) -> Result<SampleLinearization> {
    let sys = &ocp.system;
    let h = ocp.horizon;
    let (nx, ng, nz) = (sys.n_x, sys.n_g(), sys.n_z());
    let w = 1.0 / ocp.samples as f64;
    let mut points = Vec::with_capacity(h * nz);
    let mut outside = 0;
    for i in 0..h {
        sys.push_gp_input(xs[i].as_slice(), u[i].as_slice(), &mut points);
        if i > 0 && sys.constraints.state_violation(xs[i].as_slice()) > 0.0 {
            outside += 1;
        }
    }
    let draw = sample.draw_joint(&points).map_err(|e| e.at(sample.sample_id() as usize, 0))?;
    let mut out = SampleLinearization {
        g: Vec::with_capacity(h),
        defects: Vec::with_capacity(h),
        dynamics: Vec::with_capacity(h),
        costs: Vec::with_capacity(h),
        terminal: (DMatrix::zeros(nx, nx), DVector::zeros(nx)),
        rows: Vec::with_capacity(h),
        cost: 0.0,
        clamped: draw.clamped,
        outside,
    };
    let c = &ocp.cost;
    for i in 0..h {
        let g = DVector::from_iterator(ng, (0..ng).map(|d| draw.value(d, i)));
        let dg = DMatrix::from_fn(ng, nz, |d, e| draw.gradient(d, i)[e]);
        let (gx, gu) = sys.split_gp_jacobian(&dg);
        let (fa, fb) = sys.known.jacobians(&xs[i], &u[i]);
        let next = sys.step_with(&xs[i], &u[i], &g);
        out.defects.push(&next - &xs[i + 1]);
        out.dynamics.push(StageDynamics {
            a: fa + &sys.b_d * gx,
            b: fb + &sys.b_d * gu,
            c: next - &xs[i + 1],
        });
        out.g.push(g);
        out.costs.push(StageCost {
            q: &c.q * (2.0 * w),
            r: &c.r * (2.0 * w),
            s: DMatrix::zeros(sys.n_u, nx),
            qx: &c.q * (&xs[i] - &c.x_ref) * (2.0 * w),
            qu: &c.r * (&u[i] - &c.u_ref) * (2.0 * w),
        });
        out.cost += w * c.stage(&xs[i], &u[i]);
        let rows = sys.constraints.state_rows(xs[i + 1].as_slice());
        out.rows.push(LinearRows {
            jac: rows.jacobian,
            value: DVector::from_vec(rows.values),
            soft: ocp.state_soft_weight,
        });
    }
    out.terminal = (&c.q_terminal * (2.0 * w), &c.q_terminal * (&xs[h] - &c.x_ref) * (2.0 * w));
    out.cost += w * c.terminal(&xs[h]);
    Ok(out)
}

/// Preparation phase: sample every function along its trajectory and build
/// the QP. The sampled rows are appended to each sample's memory.
pub fn prepare(it: &mut SqpIterate, ocp: &OcpDefinition) -> Result<LinearizationData> {
    let h = ocp.horizon;
    let u = &it.u;
    let before: Vec<SamplerStats> = it.samples.iter().map(SampledDynamics::stats).collect();
    let per_sample: Vec<SampleLinearization> = it
        .samples
        .par_iter_mut()
        .zip(it.x.par_iter())
        .map(|(s, xs)| linearize_sample(ocp, u, xs, s))
        .collect::<Result<_>>()?;
    let outside: usize = per_sample.iter().map(|s| s.outside).sum();
    if outside > 0 {
        log::warn!("{outside} predicted states lie outside the state box; confidence bounds extrapolate");
    }
    let mut stats = SamplerStats::default();
    for (s, b) in it.samples.iter().zip(&before) {
        let now = s.stats();
        stats.merge(&SamplerStats {
            draws: now.draws - b.draws,
            attempts: now.attempts - b.attempts,
            clamped: now.clamped - b.clamped,
        });
    }
    let input_rows = (0..h)
        .map(|i| {
            let r = ocp.system.constraints.input_rows(u[i].as_slice());
            LinearRows {
                jac: r.jacobian,
                value: DVector::from_vec(r.values),
                soft: None,
            }
        })
        .collect();
    let mut qp = QpProblem {
        n_x: ocp.system.n_x,
        n_u: ocp.system.n_u,
        horizon: h,
        costs: Vec::with_capacity(ocp.samples),
        terminal: Vec::with_capacity(ocp.samples),
        dynamics: Vec::with_capacity(ocp.samples),
        state_rows: Vec::with_capacity(ocp.samples),
        input_rows,
    };
    let mut g = Vec::with_capacity(ocp.samples);
    let mut defects = Vec::with_capacity(ocp.samples);
    let mut cost = 0.0;
    let mut clamped = false;
    for s in per_sample {
        qp.costs.push(s.costs);
        qp.terminal.push(s.terminal);
        qp.dynamics.push(s.dynamics);
        qp.state_rows.push(s.rows);
        g.push(s.g);
        defects.push(s.defects);
        cost += s.cost;
        clamped |= s.clamped;
    }
    Ok(LinearizationData {
        qp,
        g,
        defects,
        cost,
        sampler: stats,
        clamped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeedbackInfo {
    pub du_norm: f64,
    pub dx_norm: f64,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    /// Largest soft-constraint slack in the QP solution.
    pub max_slack: f64,
}

/// Feedback phase: solve the QP and apply the full step.
pub fn feedback(it: &mut SqpIterate, lin: &LinearizationData) -> Result<FeedbackInfo> {
    let step = solve_condensed(&lin.qp, &QpSettings::default()).map_err(Error::InvalidArgument)?;
    feedback_with(it, step)
}

fn feedback_with(it: &mut SqpIterate, step: crate::qp::OcpStep) -> Result<FeedbackInfo> {
    let sol = &step.solution;
    if sol.status == QpStatus::Infeasible {
        let (row, residual) = sol.certificate.unwrap_or((0, f64::NAN));
        let stage = step.row_origin.get(row).map_or(0, |o| o.stage);
        return Err(Error::QpInfeasible { stage, residual });
    }
    if sol.status == QpStatus::MaxIter {
        log::warn!("QP stopped at the iteration cap; residuals {:?}", sol.residuals);
    }
    let nu = it.u[0].len();
    for (i, ui) in it.u.iter_mut().enumerate() {
        *ui += step.du.rows(i * nu, nu);
    }
    let mut dx_norm = 0.0f64;
    for (xs, dxs) in it.x.iter_mut().zip(&step.dx) {
        for (x, dx) in xs.iter_mut().zip(dxs) {
            *x += dx;
            dx_norm = dx_norm.max(dx.amax());
        }
    }
    it.iteration += 1;
    Ok(FeedbackInfo {
        du_norm: step.du.amax(),
        dx_norm,
        qp_status: sol.status,
        qp_iterations: sol.iterations,
        max_slack: sol.t.iter().copied().fold(0.0, f64::max),
    })
}

/// Feedback phase using the QP settings of `ocp`.
pub fn feedback_ocp(it: &mut SqpIterate, lin: &LinearizationData, ocp: &OcpDefinition) -> Result<FeedbackInfo> {
    let step = solve_condensed(&lin.qp, &ocp.qp).map_err(Error::InvalidArgument)?;
    feedback_with(it, step)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub du_norm: f64,
    pub dx_norm: f64,
    pub qp_converged: bool,
    pub qp_iterations: usize,
    pub max_slack: f64,
    pub acceptance_rate: f64,
    pub clamped: bool,
    /// Sample-average cost at the linearization point.
    pub cost: f64,
    pub max_defect: f64,
    pub prepare_ms: f64,
    pub feedback_ms: f64,
}

/// One preparation + feedback round with diagnostics.
pub fn sqp_round(it: &mut SqpIterate, ocp: &OcpDefinition) -> Result<IterationDiagnostics> {
    let t0 = Instant::now();
    let lin = prepare(it, ocp)?;
    let t1 = Instant::now();
    let fb = feedback_ocp(it, &lin, ocp)?;
    let t2 = Instant::now();
    Ok(IterationDiagnostics {
        iteration: it.iteration,
        du_norm: fb.du_norm,
        dx_norm: fb.dx_norm,
        qp_converged: fb.qp_status == QpStatus::Optimal,
        qp_iterations: fb.qp_iterations,
        max_slack: fb.max_slack,
        acceptance_rate: lin.sampler.acceptance_rate(),
        clamped: lin.clamped,
        cost: lin.cost,
        max_defect: lin.max_defect(),
        prepare_ms: (t1 - t0).as_secs_f64() * 1e3,
        feedback_ms: (t2 - t1).as_secs_f64() * 1e3,
    })
}

/// Runs exactly `l` SQP rounds, even if the steps vanish earlier.
pub fn run_sqp(it: &mut SqpIterate, ocp: &OcpDefinition, l: usize) -> Result<Vec<IterationDiagnostics>> {
    if l == 0 {
        return Err(Error::InvalidArgument("at least one SQP iteration is required".into()));
    }
    (0..l).map(|_| sqp_round(it, ocp)).collect()
}

/// Forward-simulates every sample under the iterate's inputs, drawing from
/// copies of the samples' current memories, and returns per sample
/// `max_i |x^n_i - x_i|_inf`.
pub fn verify_corollary1(it: &SqpIterate, ocp: &OcpDefinition) -> Result<Vec<f64>> {
    it.samples
        .par_iter()
        .zip(it.x.par_iter())
        .map(|(s, xs)| {
            let (traj, _) = simulate_sample(&ocp.system, &mut s.clone(), &xs[0], &it.u)?;
            Ok(traj.iter().zip(xs).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max))
        })
        .collect()
}

/// Sequential rollout `x_{i+1} = f(x_i, u_i) + B_d g(x_i, u_i)` with `g`
/// drawn stage by stage from `sample`. Returns states and whether any draw
/// was clamped.
pub fn simulate_sample(
    sys: &SystemSpec,
    sample: &mut SampledDynamics,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, bool)> {
    let mut xs = vec![x0.clone()];
    let mut clamped = false;
    for (i, ui) in u.iter().enumerate() {
        let x = xs.last().unwrap();
        let z = sys.gp_input(x.as_slice(), ui.as_slice());
        let d = sample.draw_values(&z).map_err(|e| e.at(sample.sample_id() as usize, i))?;
        clamped |= d.clamped;
        let g = DVector::from_iterator(sys.n_g(), (0..sys.n_g()).map(|k| d.value(k, 0)));
        xs.push(sys.step_with(x, ui, &g));
    }
    Ok((xs, clamped))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    /// Largest `h` over all samples, stages and rows; `-inf` if no rows.
    pub max_violation: f64,
    /// `(sample, stage, row)` of the largest value; sample is `None` for
    /// input rows.
    pub worst: Option<(Option<usize>, usize, RowKind)>,
    pub per_sample: Vec<f64>,
}

/// Evaluates the state constraints on every sampled trajectory and the
/// input constraints on the shared inputs.
pub fn check_open_loop_feasibility(it: &SqpIterate, ocp: &OcpDefinition) -> FeasibilityReport {
    let cons = &ocp.system.constraints;
    let mut rep = FeasibilityReport {
        max_violation: f64::NEG_INFINITY,
        worst: None,
        per_sample: vec![f64::NEG_INFINITY; it.x.len()],
    };
    for (i, u) in it.u.iter().enumerate() {
        let r = cons.input_rows(u.as_slice());
        for (v, k) in r.values.iter().zip(&r.kinds) {
            if *v > rep.max_violation {
                rep.max_violation = *v;
                rep.worst = Some((None, i, *k));
            }
        }
    }
    for (n, xs) in it.x.iter().enumerate() {
        for (i, x) in xs.iter().enumerate() {
            let r = cons.state_rows(x.as_slice());
            for (v, k) in r.values.iter().zip(&r.kinds) {
                rep.per_sample[n] = rep.per_sample[n].max(*v);
                if *v > rep.max_violation {
                    rep.max_violation = *v;
                    rep.worst = Some((Some(n), i, *k));
                }
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ConstraintSet, LinearDynamics};
    use crate::gp::{GpDataset, KernelParams};
    use crate::sampler::SamplerConfig;

    /// Double integrator whose GP residual has a prior scale of 1e-6, so the
    /// sampled dynamics are linear up to the sampled-row noise.
    fn linear_problem() -> (OcpDefinition, Arc<GpModel>) {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.005, 0.1]);
        let b_d = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let sys = SystemSpec {
            name: "double-integrator".into(),
            n_x: 2,
            n_u: 1,
            dt: 0.1,
            known: Arc::new(LinearDynamics { a, b }),
            b_d,
            gp_inputs: vec![0, 1, 2],
            constraints: ConstraintSet::unconstrained(2, 1),
        };
        let ocp = OcpDefinition {
            system: sys,
            horizon: 5,
            samples: 2,
            cost: QuadraticCost::diagonal(&[1.0, 0.5], &[0.1], &[1.0, 0.0], &[0.0]),
            state_soft_weight: Some(1e4),
            qp: QpSettings::default(),
        };
        let mut d = GpDataset::new(3);
        for x in [-1.0, 0.0, 1.0] {
            for v in [-1.0, 1.0] {
                d.push_value(vec![x, v, 0.0], 0.0).unwrap();
            }
        }
        let params = KernelParams::new(vec![1.0, 1.0, 1.0], 1e-6, 1e-14).unwrap();
        let model = GpModel::new(&[d], &[params], SamplerConfig::default()).unwrap();
        (ocp, Arc::new(model))
    }

    #[test]
    fn negligible_residual_gives_known_jacobians() {
        let (ocp, model) = linear_problem();
        let mut it = SqpIterate::new(&ocp, model, &DVector::zeros(2), initial_guess(&ocp, &[0.0]), 1).unwrap();
        let lin = prepare(&mut it, &ocp).unwrap();
        for n in 0..2 {
            for d in &lin.qp.dynamics[n] {
                let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
                assert!((&d.a - a).amax() < 1e-4);
                assert!((d.b[(1, 0)] - 0.1).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn linear_quadratic_problem_converges_in_one_step() {
        let (ocp, model) = linear_problem();
        let mut it = SqpIterate::new(&ocp, model, &DVector::zeros(2), initial_guess(&ocp, &[0.0]), 1).unwrap();
        let diag = run_sqp(&mut it, &ocp, 2).unwrap();
        assert!(diag[0].du_norm > 1e-1);
        assert!(diag[1].du_norm < 1e-4, "{}", diag[1].du_norm);
        assert!(diag[1].max_defect < 1e-4);
    }

    #[test]
    fn shared_inputs_across_samples() {
        let (ocp, model) = linear_problem();
        let mut it = SqpIterate::new(&ocp, model, &DVector::zeros(2), initial_guess(&ocp, &[0.0]), 3).unwrap();
        let lin = prepare(&mut it, &ocp).unwrap();
        assert_eq!(lin.qp.samples(), 2);
        assert_eq!(lin.qp.n_du(), 5);
        feedback(&mut it, &lin).unwrap();
        assert_eq!(it.u.len(), 5);
    }

    #[test]
    fn feasibility_report_finds_exact_violation() {
        let (mut ocp, model) = linear_problem();
        ocp.system.constraints.state_upper[0] = 0.5;
        let mut it = SqpIterate::new(&ocp, model, &DVector::zeros(2), initial_guess(&ocp, &[0.0]), 1).unwrap();
        let r = check_open_loop_feasibility(&it, &ocp);
        assert!(r.max_violation < 0.0);
        it.x[1][3][0] = 0.75;
        let r = check_open_loop_feasibility(&it, &ocp);
        assert!((r.max_violation - 0.25).abs() < 1e-15);
        assert_eq!(r.worst, Some((Some(1), 3, RowKind::StateUpper(0))));
    }
}
