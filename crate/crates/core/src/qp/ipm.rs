//! Dense primal-dual interior-point solver (Mehrotra predictor-corrector).
//!
//! Solves
//!
//! ```text
//! min  1/2 x'Px + q'x + sum_j rho_j t_j
//! s.t. A x = b,   G x <= h + t,   t >= 0
//! ```
//!
//! where `t_j` exists only for soft rows (`rho_j` finite). The soft slack is
//! eliminated analytically, so every iteration factors one `n x n` matrix.

use serde::{Deserialize, Serialize};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::linalg::min_eigenvalue_estimate;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    /// L1 penalty per inequality row; `None` makes the row hard.
    pub soft: Vec<Option<f64>>,
}

impl DenseQp {
    pub fn new(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            p,
            q,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            g: DMatrix::zeros(0, n),
            h: DVector::zeros(0),
            soft: Vec::new(),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn with_inequalities(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.soft = vec![None; h.len()];
        self.g = g;
        self.h = h;
        self
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    fn check(&self) -> Result<(), String> {
        let n = self.n();
        if self.p.shape() != (n, n) {
            return Err(format!("P is {:?}, expected {n}x{n}", self.p.shape()));
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err("equality block has inconsistent dimensions".into());
        }
        if self.g.ncols() != n || self.g.nrows() != self.h.len() || self.soft.len() != self.h.len() {
            return Err("inequality block has inconsistent dimensions".into());
        }
        if self.soft.iter().flatten().any(|&r| !(r > 0.0)) {
            return Err("soft penalties must be positive".into());
        }
        let finite = self.p.iter().chain(self.q.iter()).chain(self.a.iter()).chain(self.b.iter()).chain(self.g.iter()).all(|v| v.is_finite())
            && self.h.iter().all(|v| v.is_finite());
        if !finite {
            return Err("non-finite QP data".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Equality multipliers.
    pub nu: DVector<f64>,
    /// Inequality multipliers.
    pub z: DVector<f64>,
    /// Violation `t` of each inequality row (zero on hard rows).
    pub t: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: Residuals,
    /// For infeasible problems: index of the inequality row with the
    /// largest certificate weight and the certificate residual.
    pub certificate: Option<(usize, f64)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Residuals {
    pub stationarity: f64,
    pub equality: f64,
    pub inequality: f64,
    pub complementarity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100 }
    }
}

/// Fraction of the distance to the boundary taken by each step.
const STEP_FRACTION: f64 = 0.99;

fn max_step(v: &DVector<f64>, dv: &DVector<f64>, mask: Option<&[bool]>) -> f64 {
    let mut a = f64::INFINITY;
    for i in 0..v.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if dv[i] < 0.0 {
            a = a.min(-v[i] / dv[i]);
        }
    }
    a
}

struct Direction {
    dx: DVector<f64>,
    dnu: DVector<f64>,
    dz: DVector<f64>,
    ds: DVector<f64>,
    dt: DVector<f64>,
    dy: DVector<f64>,
}

pub fn solve(qp: &DenseQp, settings: &QpSettings) -> Result<QpSolution, String> {
    qp.check()?;
    let n = qp.n();
    let me = qp.b.len();
    let mi = qp.h.len();
    let soft: Vec<bool> = qp.soft.iter().map(Option::is_some).collect();
    let rho = DVector::from_iterator(mi, qp.soft.iter().map(|r| r.unwrap_or(0.0)));
    let n_comp = mi + soft.iter().filter(|&&s| s).count();

    let mut p = qp.p.clone();
    p = (&p + p.transpose()) * 0.5;
    let reg = (1e-8 - min_eigenvalue_estimate(&p)).max(0.0);
    for i in 0..n {
        p[(i, i)] += reg;
    }

    let scale_d = 1.0 + qp.q.amax();
    let scale_e = 1.0 + qp.b.amax();
    let scale_i = 1.0 + qp.h.amax();
    let h = &qp.h;

    // Start from the least-squares point of `1/2 x'Px + q'x + 1/2 |Gx - h|^2`
    // under the equalities. Soft rows start dual feasible with `s z = t y`.
    let init = KktFactor::new(&(&p + qp.g.transpose() * &qp.g), &qp.a)
        .ok_or_else(|| "KKT matrix could not be factored".to_string())?;
    let (mut x, mut nu) = init.solve(&(qp.g.transpose() * h - &qp.q), &qp.b);
    let r = h - &qp.g * &x;
    let mut s = DVector::from_element(mi, 1.0);
    let mut t = DVector::zeros(mi);
    let mut y = DVector::zeros(mi);
    let mut z = DVector::zeros(mi);
    for j in 0..mi {
        if soft[j] {
            t[j] = (-r[j]).max(0.0) + 1.0;
            s[j] = r[j] + t[j];
            z[j] = rho[j] * t[j] / (s[j] + t[j]);
            y[j] = rho[j] - z[j];
        } else {
            s[j] = r[j].max(1.0);
            z[j] = 1.0 / s[j];
        }
    }
    if me == 0 {
        nu = DVector::zeros(0);
    }

    let mut status = QpStatus::MaxIter;
    let mut residuals = Residuals::default();
    let mut certificate = None;
    let mut iterations = 0;

    for it in 0..=settings.max_iter {
        iterations = it;
        let r_d = &p * &x + &qp.q + qp.a.transpose() * &nu + qp.g.transpose() * &z;
        let r_e = &qp.a * &x - &qp.b;
        let r_p = &qp.g * &x + &s - &t - h;
        let mut r_t = &rho - &z - &y;
        for j in 0..mi {
            if !soft[j] {
                r_t[j] = 0.0;
            }
        }
        let comp = s.dot(&z) + t.dot(&y);
        let mu = if n_comp > 0 { comp / n_comp as f64 } else { 0.0 };
        let comp_max = s.component_mul(&z).amax().max(t.component_mul(&y).amax());
        residuals = Residuals {
            stationarity: r_d.amax(),
            equality: r_e.amax(),
            inequality: r_p.amax().max(r_t.amax()),
            complementarity: comp_max,
        };
        log::trace!("ipm {it}: {residuals:?} mu {mu:.3e}");
        if residuals.stationarity <= settings.tol * scale_d
            && residuals.equality <= settings.tol * scale_e
            && residuals.inequality <= settings.tol * scale_i
            && comp_max <= settings.tol
        {
            status = QpStatus::Optimal;
            break;
        }
        if let Some(cert) = farkas_certificate(qp, &nu, &z, &soft, settings.tol) {
            status = QpStatus::Infeasible;
            certificate = Some(cert);
            break;
        }
        if it == settings.max_iter {
            break;
        }

        // W = S/Z + T/Y
        let mut w = DVector::zeros(mi);
        for j in 0..mi {
            w[j] = s[j] / z[j] + if soft[j] { t[j] / y[j] } else { 0.0 };
        }
        let mut m = p.clone();
        let gw = DMatrix::from_fn(mi, n, |j, c| qp.g[(j, c)] / w[j]);
        m += qp.g.transpose() * &gw;
        let Some(kkt) = KktFactor::new(&m, &qp.a) else {
            return Err("KKT matrix could not be factored".into());
        };

        let solve_dir = |r_sz: &DVector<f64>, r_ty: &DVector<f64>| -> Direction {
            let mut r_tilde = r_p.clone();
            for j in 0..mi {
                r_tilde[j] -= r_sz[j] / z[j];
                if soft[j] {
                    r_tilde[j] += (r_ty[j] + t[j] * r_t[j]) / y[j];
                }
            }
            let rw = r_tilde.component_div(&w);
            let rhs_x = -&r_d - qp.g.transpose() * &rw;
            let rhs_e = -&r_e;
            let (dx, dnu) = kkt.solve(&rhs_x, &rhs_e);
            let dz = (&qp.g * &dx + &r_tilde).component_div(&w);
            let mut ds = DVector::zeros(mi);
            let mut dt = DVector::zeros(mi);
            let mut dy = DVector::zeros(mi);
            for j in 0..mi {
                ds[j] = -(r_sz[j] + s[j] * dz[j]) / z[j];
                if soft[j] {
                    dt[j] = -(r_ty[j] + t[j] * r_t[j]) / y[j] + t[j] / y[j] * dz[j];
                    dy[j] = r_t[j] - dz[j];
                }
            }
            Direction { dx, dnu, dz, ds, dt, dy }
        };
        let step_len = |d: &Direction| -> f64 {
            max_step(&s, &d.ds, None)
                .min(max_step(&z, &d.dz, None))
                .min(max_step(&t, &d.dt, Some(&soft)))
                .min(max_step(&y, &d.dy, Some(&soft)))
        };

        // predictor
        let r_sz = s.component_mul(&z);
        let r_ty = t.component_mul(&y);
        let aff = solve_dir(&r_sz, &r_ty);
        let a_aff = step_len(&aff).min(1.0);
        let comp_aff = (&s + a_aff * &aff.ds).dot(&(&z + a_aff * &aff.dz))
            + (&t + a_aff * &aff.dt).dot(&(&y + a_aff * &aff.dy));
        let sigma = if comp > 0.0 { (comp_aff / comp).clamp(0.0, 1.0).powi(3) } else { 0.0 };

        // corrector
        let mut r_sz = r_sz + aff.ds.component_mul(&aff.dz);
        let mut r_ty = r_ty + aff.dt.component_mul(&aff.dy);
        for j in 0..mi {
            r_sz[j] -= sigma * mu;
            if soft[j] {
                r_ty[j] -= sigma * mu;
            } else {
                r_ty[j] = 0.0;
            }
        }
        let d = solve_dir(&r_sz, &r_ty);
        let alpha = (STEP_FRACTION * step_len(&d)).min(1.0);
        x += alpha * &d.dx;
        nu += alpha * &d.dnu;
        z += alpha * &d.dz;
        s += alpha * &d.ds;
        t += alpha * &d.dt;
        y += alpha * &d.dy;
    }
    Ok(QpSolution {
        x,
        nu,
        z,
        t,
        status,
        iterations,
        residuals,
        certificate,
    })
}

/// Checks whether the normalized multipliers certify infeasibility of the
/// hard rows: `A'nu + G'z ~ 0`, `z >= 0` and `b'nu + h'z < 0`.
fn farkas_certificate(qp: &DenseQp, nu: &DVector<f64>, z: &DVector<f64>, soft: &[bool], tol: f64) -> Option<(usize, f64)> {
    let mut zh = z.clone();
    for (j, &sft) in soft.iter().enumerate() {
        if sft {
            zh[j] = 0.0;
        }
    }
    let norm = nu.amax().max(zh.amax());
    if norm < 1e6 {
        return None;
    }
    let nu_n = nu / norm;
    let z_n = &zh / norm;
    let res = (qp.a.transpose() * &nu_n + qp.g.transpose() * &z_n).amax();
    let gap = qp.b.dot(&nu_n) + qp.h.iter().zip(z_n.iter()).map(|(h, z)| if *z == 0.0 { 0.0 } else { h * z }).sum::<f64>();
    if res < tol.sqrt() && gap < -tol.sqrt() {
        let row = z_n.imax();
        Some((row, res))
    } else {
        None
    }
}

/// Factorization of `[[M, A'], [A, 0]]` via Cholesky of `M` and of the
/// Schur complement `A M^{-1} A'`.
struct KktFactor {
    m: Cholesky<f64, Dyn>,
    a: DMatrix<f64>,
    m_inv_at: DMatrix<f64>,
    schur: Option<Cholesky<f64, Dyn>>,
}

impl KktFactor {
    fn new(m: &DMatrix<f64>, a: &DMatrix<f64>) -> Option<Self> {
        let mut chol = Cholesky::new(m.clone());
        if chol.is_none() {
            let n = m.nrows();
            let shift = 1e-10 * (m.trace() / n.max(1) as f64).abs().max(1.0);
            chol = Cholesky::new(m + DMatrix::identity(n, n) * shift);
        }
        let chol = chol?;
        if a.nrows() == 0 {
            return Some(Self {
                m: chol,
                a: a.clone(),
                m_inv_at: DMatrix::zeros(m.nrows(), 0),
                schur: None,
            });
        }
        let m_inv_at = chol.solve(&a.transpose());
        let mut sc = a * &m_inv_at;
        sc = (&sc + sc.transpose()) * 0.5;
        let k = sc.nrows();
        let mut schur = Cholesky::new(sc.clone());
        if schur.is_none() {
            let shift = 1e-12 * (sc.trace() / k as f64).abs().max(1e-300);
            schur = Cholesky::new(sc + DMatrix::identity(k, k) * shift);
        }
        Some(Self {
            m: chol,
            a: a.clone(),
            m_inv_at,
            schur: Some(schur?),
        })
    }

    /// Solves `M dx + A' dnu = r1`, `A dx = r2`.
    fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let w = self.m.solve(r1);
        match &self.schur {
            None => (w, DVector::zeros(0)),
            Some(sc) => {
                let dnu = sc.solve(&(&self.a * &w - r2));
                let dx = w - &self.m_inv_at * &dnu;
                (dx, dnu)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_with_lower_bound() {
        // min x^2 s.t. x >= 1
        let qp = DenseQp::new(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1))
            .with_inequalities(DMatrix::from_element(1, 1, -1.0), DVector::from_element(1, -1.0));
        let sol = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-7);
        assert!((sol.z[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn unconstrained_is_newton_step() {
        let p = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let q = DVector::from_column_slice(&[1.0, -1.0]);
        let sol = solve(&DenseQp::new(p.clone(), q.clone()), &QpSettings::default()).unwrap();
        let exact = -p.try_inverse().unwrap() * q;
        assert!((sol.x - exact).amax() < 1e-10);
    }

    #[test]
    fn equality_constrained() {
        // min x^2 + y^2 s.t. x + y = 2
        let qp = DenseQp::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, 2.0));
        let sol = solve(&qp, &QpSettings::default()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9 && (sol.x[1] - 1.0).abs() < 1e-9);
        assert!((sol.nu[0] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn infeasible_hard_rows_are_detected() {
        // x >= 1 and x <= 0
        let qp = DenseQp::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_inequalities(DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]), DVector::from_column_slice(&[-1.0, 0.0]));
        let sol = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        assert!(sol.certificate.is_some());
    }

    #[test]
    fn soft_rows_absorb_infeasibility() {
        let mut qp = DenseQp::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_inequalities(DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]), DVector::from_column_slice(&[-1.0, 0.0]));
        qp.soft = vec![Some(1e4), None];
        let sol = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.x[0].abs() < 1e-7);
        assert!((sol.t[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn soft_slack_is_zero_when_feasible() {
        let mut qp = DenseQp::new(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1))
            .with_inequalities(DMatrix::from_element(1, 1, -1.0), DVector::from_element(1, -1.0));
        qp.soft = vec![Some(1e4)];
        let sol = solve(&qp, &QpSettings::default()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-7);
        assert!(sol.t[0].abs() < 1e-7);
    }
}
