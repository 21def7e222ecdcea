//! Benchmark systems `x+ = f(x, u) + B_d g(x, u)` and training data.
//!
//! The controller only ever sees a [`SystemSpec`]. The true residual lives
//! in a separate [`Plant`], used to generate training data and to step the
//! closed loop.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpDataset, Observation};

/// Known part `f` of the dynamics with its Jacobians.
pub trait KnownDynamics: Send + Sync + fmt::Debug {
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `(df/dx, df/du)`.
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>);
}

/// `f(x, u) = A x + B u`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl KnownDynamics for LinearDynamics {
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone())
    }
}

/// Ellipse obstacle `level - (p_x - c_x)^2 / sx - (p_y - c_y)^2 / sy <= 0`
/// on two state coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub scale: [f64; 2],
    pub level: f64,
    pub indices: [usize; 2],
}

impl Ellipse {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let dx = x[self.indices[0]] - self.center[0];
        let dy = x[self.indices[1]] - self.center[1];
        self.level - dx * dx / self.scale[0] - dy * dy / self.scale[1]
    }

    /// Gradient with respect to the two position coordinates.
    pub fn gradient(&self, x: &[f64]) -> [f64; 2] {
        let dx = x[self.indices[0]] - self.center[0];
        let dy = x[self.indices[1]] - self.center[1];
        [-2.0 * dx / self.scale[0], -2.0 * dy / self.scale[1]]
    }

    /// Half-widths of the boundary along both axes.
    pub fn semi_axes(&self) -> [f64; 2] {
        [(self.level * self.scale[0]).sqrt(), (self.level * self.scale[1]).sqrt()]
    }
}

/// Car-obstacle ellipses `(x_p - x_e)^2/9 + (y_p - y_e)^2 >= 5.67`.
pub fn obstacle_constraints(centers: &[[f64; 2]]) -> Vec<Ellipse> {
    centers
        .iter()
        .map(|&center| Ellipse {
            center,
            scale: [9.0, 1.0],
            level: 5.67,
            indices: [0, 1],
        })
        .collect()
}

/// Which family a constraint row belongs to, for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    StateUpper(usize),
    StateLower(usize),
    InputUpper(usize),
    InputLower(usize),
    Obstacle(usize),
}

/// Rows `h(x) <= 0` with Jacobian.
#[derive(Clone, Debug)]
pub struct ConstraintRows {
    pub values: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub kinds: Vec<RowKind>,
}

/// Box bounds on states and inputs plus obstacle ellipses on the states.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSet {
    pub state_lower: Vec<f64>,
    pub state_upper: Vec<f64>,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    pub obstacles: Vec<Ellipse>,
}

impl ConstraintSet {
    pub fn unconstrained(n_x: usize, n_u: usize) -> Self {
        Self {
            state_lower: vec![f64::NEG_INFINITY; n_x],
            state_upper: vec![f64::INFINITY; n_x],
            input_lower: vec![f64::NEG_INFINITY; n_u],
            input_upper: vec![f64::INFINITY; n_u],
            obstacles: Vec::new(),
        }
    }

    fn validate(&self, n_x: usize, n_u: usize) -> Result<()> {
        if self.state_lower.len() != n_x || self.state_upper.len() != n_x {
            return Err(Error::InvalidArgument(format!("state bounds must have length {n_x}")));
        }
        if self.input_lower.len() != n_u || self.input_upper.len() != n_u {
            return Err(Error::InvalidArgument(format!("input bounds must have length {n_u}")));
        }
        for (lo, hi) in self.state_lower.iter().zip(&self.state_upper).chain(self.input_lower.iter().zip(&self.input_upper)) {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::InvalidArgument(format!("bad bound pair [{lo}, {hi}]")));
            }
        }
        for e in &self.obstacles {
            if e.indices.iter().any(|&i| i >= n_x) || e.scale.iter().any(|&s| !(s > 0.0)) {
                return Err(Error::InvalidArgument(format!("bad obstacle {e:?}")));
            }
        }
        Ok(())
    }

    fn box_rows(lower: &[f64], upper: &[f64], v: &[f64], input: bool, rows: &mut ConstraintRows, triplets: &mut Vec<(usize, usize, f64)>) {
        for (i, ((&lo, &hi), &vi)) in lower.iter().zip(upper).zip(v).enumerate() {
            if hi.is_finite() {
                triplets.push((rows.values.len(), i, 1.0));
                rows.values.push(vi - hi);
                rows.kinds.push(if input { RowKind::InputUpper(i) } else { RowKind::StateUpper(i) });
            }
            if lo.is_finite() {
                triplets.push((rows.values.len(), i, -1.0));
                rows.values.push(lo - vi);
                rows.kinds.push(if input { RowKind::InputLower(i) } else { RowKind::StateLower(i) });
            }
        }
    }

    pub fn state_rows(&self, x: &[f64]) -> ConstraintRows {
        let mut rows = ConstraintRows {
            values: Vec::new(),
            jacobian: DMatrix::zeros(0, 0),
            kinds: Vec::new(),
        };
        let mut trip = Vec::new();
        Self::box_rows(&self.state_lower, &self.state_upper, x, false, &mut rows, &mut trip);
        for (k, e) in self.obstacles.iter().enumerate() {
            let g = e.gradient(x);
            trip.push((rows.values.len(), e.indices[0], g[0]));
            trip.push((rows.values.len(), e.indices[1], g[1]));
            rows.values.push(e.eval(x));
            rows.kinds.push(RowKind::Obstacle(k));
        }
        rows.jacobian = from_triplets(rows.values.len(), x.len(), &trip);
        rows
    }

    pub fn input_rows(&self, u: &[f64]) -> ConstraintRows {
        let mut rows = ConstraintRows {
            values: Vec::new(),
            jacobian: DMatrix::zeros(0, 0),
            kinds: Vec::new(),
        };
        let mut trip = Vec::new();
        Self::box_rows(&self.input_lower, &self.input_upper, u, true, &mut rows, &mut trip);
        rows.jacobian = from_triplets(rows.values.len(), u.len(), &trip);
        rows
    }

    /// Largest `h` over state rows (`-inf` when there are none).
    pub fn state_violation(&self, x: &[f64]) -> f64 {
        self.state_rows(x).values.into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn input_violation(&self, u: &[f64]) -> f64 {
        self.input_rows(u).values.into_iter().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn from_triplets(rows: usize, cols: usize, trip: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for &(r, c, v) in trip {
        m[(r, c)] += v;
    }
    m
}

/// Everything the controller may know about a system.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    pub name: String,
    pub n_x: usize,
    pub n_u: usize,
    pub dt: f64,
    pub known: Arc<dyn KnownDynamics>,
    /// `n_x x n_g`, full column rank.
    pub b_d: DMatrix<f64>,
    /// Indices into the stacked vector `(x, u)` that form the GP input.
    pub gp_inputs: Vec<usize>,
    pub constraints: ConstraintSet,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.b_d.nrows() != self.n_x || self.b_d.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "B_d is {}x{}, expected {} rows",
                self.b_d.nrows(),
                self.b_d.ncols(),
                self.n_x
            )));
        }
        if self.gp_inputs.is_empty() || self.gp_inputs.iter().any(|&i| i >= self.n_x + self.n_u) {
            return Err(Error::InvalidArgument(format!("bad GP input indices {:?}", self.gp_inputs)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("sampling time must be positive, got {}", self.dt)));
        }
        self.b_d_pinv()?;
        self.constraints.validate(self.n_x, self.n_u)
    }

    pub fn n_g(&self) -> usize {
        self.b_d.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.gp_inputs.len()
    }

    /// Left pseudo-inverse `(B_d^T B_d)^{-1} B_d^T`.
    pub fn b_d_pinv(&self) -> Result<DMatrix<f64>> {
        let btb = self.b_d.transpose() * &self.b_d;
        let inv = btb
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("B_d does not have full column rank".into()))?
            .inverse();
        Ok(inv * self.b_d.transpose())
    }

    pub fn gp_input(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.gp_inputs
            .iter()
            .map(|&i| if i < self.n_x { x[i] } else { u[i - self.n_x] })
            .collect()
    }

    /// Writes the GP input into a flat buffer.
    pub fn push_gp_input(&self, x: &[f64], u: &[f64], out: &mut Vec<f64>) {
        out.extend(self.gp_inputs.iter().map(|&i| if i < self.n_x { x[i] } else { u[i - self.n_x] }));
    }

    /// Splits a GP-input Jacobian `n_g x n_z` into state and input parts.
    pub fn split_gp_jacobian(&self, dg_dz: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut gx = DMatrix::zeros(dg_dz.nrows(), self.n_x);
        let mut gu = DMatrix::zeros(dg_dz.nrows(), self.n_u);
        for (k, &i) in self.gp_inputs.iter().enumerate() {
            for r in 0..dg_dz.nrows() {
                if i < self.n_x {
                    gx[(r, i)] += dg_dz[(r, k)];
                } else {
                    gu[(r, i - self.n_x)] += dg_dz[(r, k)];
                }
            }
        }
        (gx, gu)
    }

    /// `f(x, u) + B_d g` for a given residual value.
    pub fn step_with(&self, x: &DVector<f64>, u: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        self.known.eval(x, u) + &self.b_d * g
    }
}

/// Residual oracle `g_true(z)`.
pub type ResidualFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// The true system. Used to generate data and to step the closed loop,
/// never by the controller.
#[derive(Clone)]
pub struct Plant {
    spec: SystemSpec,
    residual: ResidualFn,
}

impl fmt::Debug for Plant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Plant").field("system", &self.spec.name).finish()
    }
}

impl Plant {
    pub fn new(spec: SystemSpec, residual: ResidualFn) -> Self {
        Self { spec, residual }
    }

    /// `g_true` at a GP input.
    pub fn residual(&self, z: &[f64]) -> Vec<f64> {
        (self.residual)(z)
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let z = self.spec.gp_input(x.as_slice(), u.as_slice());
        let g = DVector::from_vec(self.residual(&z));
        self.spec.step_with(x, u, &g)
    }
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub system: SystemSpec,
    pub plant: Plant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub theta_bound: f64,
    pub omega_bound: f64,
    pub alpha_bound: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            length: 1.0,
            gravity: 10.0,
            dt: 0.015,
            theta_bound: 2.14,
            omega_bound: 2.5,
            alpha_bound: 8.0,
        }
    }
}

impl PendulumParams {
    /// Wider angle range `[-3, 3]`.
    pub fn wide_angle() -> Self {
        Self {
            theta_bound: 3.0,
            ..Self::default()
        }
    }
}

/// Pendulum with `f = 0`, `B_d = I` and `g(theta, omega, alpha)` the whole
/// discrete map.
pub fn pendulum_spec(p: &PendulumParams) -> Result<Benchmark> {
    let system = SystemSpec {
        name: "pendulum".into(),
        n_x: 2,
        n_u: 1,
        dt: p.dt,
        known: Arc::new(LinearDynamics {
            a: DMatrix::zeros(2, 2),
            b: DMatrix::zeros(2, 1),
        }),
        b_d: DMatrix::identity(2, 2),
        gp_inputs: vec![0, 1, 2],
        constraints: ConstraintSet {
            state_lower: vec![-p.theta_bound, -p.omega_bound],
            state_upper: vec![p.theta_bound, p.omega_bound],
            input_lower: vec![-p.alpha_bound],
            input_upper: vec![p.alpha_bound],
            obstacles: Vec::new(),
        },
    };
    system.validate()?;
    let (l, ga, dt) = (p.length, p.gravity, p.dt);
    let residual: ResidualFn = Arc::new(move |z: &[f64]| {
        let (th, om, al) = (z[0], z[1], z[2]);
        vec![th + om * dt, om - ga * th.sin() * dt / l + al * dt]
    });
    Ok(Benchmark {
        plant: Plant::new(system.clone(), residual),
        system,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BicycleParams {
    pub l_f: f64,
    pub l_r: f64,
    pub dt: f64,
    pub x_bounds: [f64; 2],
    pub y_bounds: [f64; 2],
    pub heading_bound: f64,
    pub speed_bounds: [f64; 2],
    pub steer_bound: f64,
    pub accel_bound: f64,
    /// Centers `(x_e, y_e)` of the other vehicles.
    pub obstacles: Vec<[f64; 2]>,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self {
            l_f: 1.105,
            l_r: 1.738,
            dt: 0.06,
            x_bounds: [-2.14, 70.0],
            y_bounds: [0.0, 6.0],
            heading_bound: 1.14,
            speed_bounds: [-1.0, 15.0],
            steer_bound: 0.6,
            accel_bound: 2.0,
            obstacles: Vec::new(),
        }
    }
}

/// Kinematic bicycle, state `(x_p, y_p, theta, v)`, input `(delta, a)`.
/// Only the speed integrator is known; position and heading increments
/// are the residual `g(theta, v, delta)`.
pub fn bicycle_spec(p: &BicycleParams) -> Result<Benchmark> {
    let dt = p.dt;
    let mut b = DMatrix::zeros(4, 2);
    b[(3, 1)] = dt;
    let mut b_d = DMatrix::zeros(4, 3);
    for i in 0..3 {
        b_d[(i, i)] = 1.0;
    }
    let system = SystemSpec {
        name: "bicycle".into(),
        n_x: 4,
        n_u: 2,
        dt,
        known: Arc::new(LinearDynamics {
            a: DMatrix::identity(4, 4),
            b,
        }),
        b_d,
        gp_inputs: vec![2, 3, 4],
        constraints: ConstraintSet {
            state_lower: vec![p.x_bounds[0], p.y_bounds[0], -p.heading_bound, p.speed_bounds[0]],
            state_upper: vec![p.x_bounds[1], p.y_bounds[1], p.heading_bound, p.speed_bounds[1]],
            input_lower: vec![-p.steer_bound, -p.accel_bound],
            input_upper: vec![p.steer_bound, p.accel_bound],
            obstacles: obstacle_constraints(&p.obstacles),
        },
    };
    system.validate()?;
    let (l_f, l_r) = (p.l_f, p.l_r);
    let residual: ResidualFn = Arc::new(move |z: &[f64]| {
        let (th, v, delta) = (z[0], z[1], z[2]);
        let zeta = (l_r * delta.tan() / (l_f + l_r)).atan();
        vec![
            v * (th + zeta).cos() * dt,
            v * (th + zeta).sin() * dt,
            v * zeta.sin() / l_r * dt,
        ]
    });
    Ok(Benchmark {
        plant: Plant::new(system.clone(), residual),
        system,
    })
}

/// Equally spaced mesh over the GP input space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingGridSpec {
    pub counts: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Standard deviation `lambda` of the measurement noise.
    #[serde(default)]
    pub noise_std: f64,
    /// Also record (noisy) gradients of the residual at each grid point.
    #[serde(default)]
    pub with_gradients: bool,
}

impl TrainingGridSpec {
    pub fn validate(&self, n_z: usize) -> Result<()> {
        if self.counts.len() != n_z || self.lower.len() != n_z || self.upper.len() != n_z {
            return Err(Error::InvalidArgument(format!("grid spec must have {n_z} dimensions")));
        }
        if self.counts.contains(&0) {
            return Err(Error::InvalidArgument("grid counts must be at least 1".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidArgument("grid ranges must be finite with lower <= upper".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("noise std must be non-negative".into()));
        }
        Ok(())
    }

    /// Grid points, last dimension varying fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.counts.len())
            .map(|d| {
                let n = self.counts[d];
                if n == 1 {
                    vec![0.5 * (self.lower[d] + self.upper[d])]
                } else {
                    (0..n)
                        .map(|k| self.lower[d] + (self.upper[d] - self.lower[d]) * k as f64 / (n - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

/// Noisy one-step residual measurements `B_d^+ (x+ - f(x, u)) + e` on the
/// grid, one dataset per output dimension.
///
/// State and input coordinates that are not GP inputs are set to zero.
pub fn generate_training_data(bench: &Benchmark, grid: &TrainingGridSpec, seed: u64) -> Result<Vec<GpDataset>> {
    let spec = &bench.system;
    let n_z = spec.n_z();
    grid.validate(n_z)?;
    let pinv = spec.b_d_pinv()?;
    let n_g = spec.n_g();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, grid.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut data = vec![GpDataset::new(n_z); n_g];
    let measure = |z: &[f64]| -> DVector<f64> {
        let mut x = DVector::zeros(spec.n_x);
        let mut u = DVector::zeros(spec.n_u);
        for (k, &i) in spec.gp_inputs.iter().enumerate() {
            if i < spec.n_x {
                x[i] = z[k];
            } else {
                u[i - spec.n_x] = z[k];
            }
        }
        &pinv * (bench.plant.step(&x, &u) - spec.known.eval(&x, &u))
    };
    let nv = grid.noise_std * grid.noise_std;
    for z in grid.points() {
        let y = measure(&z);
        let grads = grid.with_gradients.then(|| {
            let h = 1e-6;
            (0..n_z)
                .map(|k| {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[k] += h;
                    zm[k] -= h;
                    (measure(&zp) - measure(&zm)) / (2.0 * h)
                })
                .collect::<Vec<_>>()
        });
        for d in 0..n_g {
            let value = y[d] + noise.sample(&mut rng);
            let gradient = grads
                .as_ref()
                .map(|g| g.iter().map(|col| col[d] + noise.sample(&mut rng)).collect::<Vec<_>>());
            data[d].push(Observation {
                input: z.clone(),
                value,
                gradient,
                noise_var: Some(nv),
            })?;
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn pendulum_hand_values() {
        let b = pendulum_spec(&PendulumParams::default()).unwrap();
        assert_eq!(b.plant.step(&dv(&[0.0, 0.0]), &dv(&[0.0])), dv(&[0.0, 0.0]));
        let x = b.plant.step(&dv(&[0.0, 1.0]), &dv(&[0.0]));
        assert!((x[0] - 0.015).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        let x = b.plant.step(&dv(&[std::f64::consts::FRAC_PI_2, 0.0]), &dv(&[0.0]));
        assert!((x[1] + 0.15).abs() < 1e-15);
    }

    #[test]
    fn bicycle_hand_values() {
        let b = bicycle_spec(&BicycleParams::default()).unwrap();
        let g = b.plant.residual(&[0.0, 10.0, 0.1]);
        let zeta = (1.738 * 0.1f64.tan() / (1.105 + 1.738)).atan();
        assert!((g[0] - 10.0 * zeta.cos() * 0.06).abs() < 1e-12);
        assert!((g[1] - 10.0 * zeta.sin() * 0.06).abs() < 1e-12);
        assert!((g[2] - 10.0 * zeta.sin() / 1.738 * 0.06).abs() < 1e-12);
        let g = b.plant.residual(&[0.3, 5.0, 0.0]);
        assert_eq!(g[2], 0.0);
        assert_eq!(b.plant.residual(&[0.3, 0.0, 0.4]), vec![0.0, 0.0, 0.0]);
        let x1 = b.plant.step(&dv(&[1.0, 2.0, 0.0, 3.0]), &dv(&[0.0, 1.0]));
        assert!((x1[3] - 3.06).abs() < 1e-12);
    }

    #[test]
    fn obstacle_boundary() {
        let e = obstacle_constraints(&[[10.0, 2.0]])[0];
        assert!((e.eval(&[10.0, 2.0]) - 5.67).abs() < 1e-15);
        assert!(e.eval(&[10.0 + 3.0 * 5.67f64.sqrt(), 2.0]).abs() < 1e-12);
        assert!(e.eval(&[40.0, 2.0]) < 0.0);
    }

    #[test]
    fn pendulum_grid_has_45_rows() {
        let b = pendulum_spec(&PendulumParams::default()).unwrap();
        let grid = TrainingGridSpec {
            counts: vec![3, 3, 5],
            lower: vec![-2.14, -2.5, -8.0],
            upper: vec![2.14, 2.5, 8.0],
            noise_std: 0.0,
            with_gradients: false,
        };
        let data = generate_training_data(&b, &grid, 0).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].len(), 45);
        for obs in data[1].observations() {
            assert_eq!(obs.value, b.plant.residual(&obs.input)[1]);
        }
    }

    #[test]
    fn pseudo_inverse_is_left_inverse() {
        for b in [
            pendulum_spec(&PendulumParams::default()).unwrap(),
            bicycle_spec(&BicycleParams::default()).unwrap(),
        ] {
            let p = b.system.b_d_pinv().unwrap() * &b.system.b_d;
            assert!((p - DMatrix::identity(b.system.n_g(), b.system.n_g())).amax() < 1e-15);
        }
    }

    #[test]
    fn state_rows_report_box_and_obstacles() {
        let mut c = ConstraintSet::unconstrained(4, 2);
        c.state_upper[0] = 70.0;
        c.obstacles = obstacle_constraints(&[[40.0, 1.95]]);
        let r = c.state_rows(&[71.0, 1.95, 0.0, 0.0]);
        assert_eq!(r.values.len(), 2);
        assert!((r.values[0] - 1.0).abs() < 1e-15);
        assert_eq!(r.kinds[1], RowKind::Obstacle(0));
        assert!((r.jacobian[(1, 0)] + 2.0 * 31.0 / 9.0).abs() < 1e-12);
    }
}
