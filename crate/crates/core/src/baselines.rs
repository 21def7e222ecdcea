//! Reference uncertainty propagation: Monte-Carlo envelopes from independent
//! sampled dynamics, linearized ellipsoids, and planar convex hulls.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2};
use rayon::prelude::*;

use crate::dynamics::SystemSpec;
use crate::error::{Error, Result};
use crate::sampler::{GpModel, SampledDynamics};
use crate::sqp::simulate_sample;

/// Per-stage outer or inner approximation of the reachable set.
#[derive(Clone, Debug, PartialEq)]
pub enum ReachableSetApprox {
    Ellipsoid {
        center: DVector<f64>,
        shape: DMatrix<f64>,
        multiplier: f64,
    },
    /// Counter-clockwise vertices.
    Polygon(Vec<[f64; 2]>),
    Points(Vec<Vec<f64>>),
}

/// `M` trajectories under `u`, each from its own sampled function drawn
/// sequentially along its own path. Returns `traj[m][i]`.
pub fn monte_carlo_envelope(
    sys: &SystemSpec,
    model: &Arc<GpModel>,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
    m: usize,
    seed: u64,
) -> Result<Vec<Vec<DVector<f64>>>> {
    if m == 0 {
        return Err(Error::InvalidArgument("Monte-Carlo count must be at least 1".into()));
    }
    (0..m as u64)
        .into_par_iter()
        .map(|id| {
            let mut s = SampledDynamics::new(model.clone(), seed, id);
            simulate_sample(sys, &mut s, x0, u).map(|(xs, _)| xs)
        })
        .collect()
}

/// Mean-dynamics rollout with covariance `S+ = A S A' + B_d diag(var_g) B_d'`.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipsoidStage {
    pub center: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Display multiplier on the standard deviations.
    pub multiplier: f64,
}

impl EllipsoidStage {
    /// Area of the `multiplier`-scaled ellipse of the projection on `dims`.
    pub fn area(&self, dims: [usize; 2]) -> f64 {
        let c = self.projected_cov(dims);
        std::f64::consts::PI * self.multiplier * self.multiplier * c.determinant().max(0.0).sqrt()
    }

    pub fn projected_cov(&self, dims: [usize; 2]) -> Matrix2<f64> {
        Matrix2::from_fn(|r, c| self.cov[(dims[r], dims[c])])
    }

    /// Boundary polyline of the projected ellipse with `n` vertices.
    pub fn boundary(&self, dims: [usize; 2], n: usize) -> Vec<[f64; 2]> {
        let c = self.projected_cov(dims);
        let e = c.symmetric_eigen();
        let (cx, cy) = (self.center[dims[0]], self.center[dims[1]]);
        (0..n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let a = self.multiplier * e.eigenvalues[0].max(0.0).sqrt() * t.cos();
                let b = self.multiplier * e.eigenvalues[1].max(0.0).sqrt() * t.sin();
                let v = e.eigenvectors * nalgebra::Vector2::new(a, b);
                [cx + v[0], cy + v[1]]
            })
            .collect()
    }
}

/// Linearization-based propagation with independent per-step GP errors.
pub fn linearized_propagation(
    sys: &SystemSpec,
    model: &GpModel,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
    multiplier: f64,
) -> Result<Vec<EllipsoidStage>> {
    let nx = sys.n_x;
    let mut out = vec![EllipsoidStage {
        center: x0.clone(),
        cov: DMatrix::zeros(nx, nx),
        multiplier,
    }];
    for ui in u {
        let prev = out.last().unwrap();
        let z = sys.gp_input(prev.center.as_slice(), ui.as_slice());
        let m = model.mean_and_jacobian(&z)?;
        let (gx, _) = sys.split_gp_jacobian(&m.jacobian);
        let (fx, _) = sys.known.jacobians(&prev.center, ui);
        let a = fx + &sys.b_d * gx;
        let sg = DMatrix::from_diagonal(&m.variance);
        let cov = &a * &prev.cov * a.transpose() + &sys.b_d * sg * sys.b_d.transpose();
        out.push(EllipsoidStage {
            center: sys.step_with(&prev.center, ui, &m.mean),
            cov: (&cov + cov.transpose()) * 0.5,
            multiplier,
        });
    }
    Ok(out)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Monotone-chain hull, counter-clockwise, starting at the lowest-leftmost
/// point. Collinear input gives the two end points, a single distinct point
/// gives one vertex.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() <= 2 {
        return p;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for &q in &p {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
            hull.pop();
        }
        hull.push(q);
    }
    let lower = hull.len() + 1;
    for &q in p.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
            hull.pop();
        }
        hull.push(q);
    }
    hull.pop();
    hull
}

/// Hull of every stage's 2-D projection; `traj[m][i]`.
pub fn convex_hulls(traj: &[Vec<DVector<f64>>], dims: [usize; 2]) -> Vec<Vec<[f64; 2]>> {
    let stages = traj.first().map_or(0, Vec::len);
    (0..stages)
        .map(|i| convex_hull(&project(traj, i, dims)))
        .collect()
}

pub fn project(traj: &[Vec<DVector<f64>>], stage: usize, dims: [usize; 2]) -> Vec<[f64; 2]> {
    traj.iter().map(|t| [t[stage][dims[0]], t[stage][dims[1]]]).collect()
}

/// Shoelace area, zero for fewer than three vertices.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..poly.len() {
        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s.abs()
}

/// Whether `q` lies in the counter-clockwise convex polygon, with absolute
/// tolerance `tol` on the distance to the boundary. Degenerate hulls are
/// treated as a segment or point.
pub fn hull_contains(poly: &[[f64; 2]], q: [f64; 2], tol: f64) -> bool {
    match poly.len() {
        0 => false,
        1 => (poly[0][0] - q[0]).hypot(poly[0][1] - q[1]) <= tol,
        2 => segment_distance(poly[0], poly[1], q) <= tol,
        n => (0..n).all(|k| {
            let (a, b) = (poly[k], poly[(k + 1) % n]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            cross(a, b, q) >= -tol * len
        }),
    }
}

fn segment_distance(a: [f64; 2], b: [f64; 2], q: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let t = if l2 > 0.0 {
        (((q[0] - a[0]) * d[0] + (q[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a[0] + t * d[0] - q[0]).hypot(a[1] + t * d[1] - q[1])
}

/// Fraction of `points` inside `poly`.
pub fn coverage(poly: &[[f64; 2]], points: &[[f64; 2]], tol: f64) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    points.iter().filter(|q| hull_contains(poly, **q, tol)).count() as f64 / points.len() as f64
}
