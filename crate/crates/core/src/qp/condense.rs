//! Multi-sample OCP QP: shared input steps, one state trajectory per sample.
//!
//! Condensing eliminates the state steps through the linearized dynamics,
//! `dx^n_i = Gamma^n_i du + c^n_i`, leaving a dense QP in `du` only.

use nalgebra::{DMatrix, DVector};

use super::ipm::{solve, DenseQp, QpSettings, QpSolution};

/// `1/2 [dx; du]' [[Q, S'], [S, R]] [dx; du] + qx' dx + qu' du`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub qx: DVector<f64>,
    pub qu: DVector<f64>,
}

impl StageCost {
    pub fn zeros(n_x: usize, n_u: usize) -> Self {
        Self {
            q: DMatrix::zeros(n_x, n_x),
            r: DMatrix::zeros(n_u, n_u),
            s: DMatrix::zeros(n_u, n_x),
            qx: DVector::zeros(n_x),
            qu: DVector::zeros(n_u),
        }
    }
}

/// `dx_{i+1} = A dx_i + B du_i + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

/// Linearized rows `value + jac * d <= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRows {
    pub jac: DMatrix<f64>,
    pub value: DVector<f64>,
    /// L1 penalty; `None` for hard rows.
    pub soft: Option<f64>,
}

impl LinearRows {
    pub fn empty(cols: usize) -> Self {
        Self {
            jac: DMatrix::zeros(0, cols),
            value: DVector::zeros(0),
            soft: None,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// The QP of one SQP iteration. `dx^n_0 = 0` for every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub n_x: usize,
    pub n_u: usize,
    pub horizon: usize,
    /// `costs[n][i]` for stages `0..H`; already weighted (e.g. by `1/N`).
    pub costs: Vec<Vec<StageCost>>,
    /// Terminal `(Q_H, q_H)` per sample.
    pub terminal: Vec<(DMatrix<f64>, DVector<f64>)>,
    /// `dynamics[n][i]` maps stage `i` to `i + 1`.
    pub dynamics: Vec<Vec<StageDynamics>>,
    /// `state_rows[n][i]` constrains `dx^n_{i+1}`.
    pub state_rows: Vec<Vec<LinearRows>>,
    /// `input_rows[i]` constrains `du_i`; shared by all samples.
    pub input_rows: Vec<LinearRows>,
}

impl QpProblem {
    pub fn samples(&self) -> usize {
        self.dynamics.len()
    }

    pub fn n_du(&self) -> usize {
        self.horizon * self.n_u
    }

    pub fn validate(&self) -> Result<(), String> {
        let (h, nx, nu) = (self.horizon, self.n_x, self.n_u);
        let ns = self.samples();
        if h == 0 || ns == 0 {
            return Err("horizon and sample count must be positive".into());
        }
        if self.costs.len() != ns || self.terminal.len() != ns || self.state_rows.len() != ns || self.input_rows.len() != h {
            return Err("per-sample blocks disagree on the sample count".into());
        }
        for n in 0..ns {
            if self.costs[n].len() != h || self.dynamics[n].len() != h || self.state_rows[n].len() != h {
                return Err(format!("sample {n} does not have {h} stages"));
            }
            for d in &self.dynamics[n] {
                if d.a.shape() != (nx, nx) || d.b.shape() != (nx, nu) || d.c.len() != nx {
                    return Err(format!("sample {n} has mis-sized dynamics"));
                }
            }
            for r in &self.state_rows[n] {
                if r.jac.ncols() != nx || r.jac.nrows() != r.value.len() {
                    return Err(format!("sample {n} has mis-sized state rows"));
                }
            }
        }
        for r in &self.input_rows {
            if r.jac.ncols() != nu || r.jac.nrows() != r.value.len() {
                return Err("mis-sized input rows".into());
            }
        }
        Ok(())
    }
}

/// Where an inequality row of the condensed QP came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowOrigin {
    /// `None` for shared input rows.
    pub sample: Option<usize>,
    pub stage: usize,
}

#[derive(Clone, Debug)]
pub struct CondensedQp {
    pub dense: DenseQp,
    /// `gammas[n][i]`, `i = 0..=H`, each `n_x x (H n_u)`.
    pub gammas: Vec<Vec<DMatrix<f64>>>,
    pub offsets: Vec<Vec<DVector<f64>>>,
    pub row_origin: Vec<RowOrigin>,
}

impl CondensedQp {
    /// State steps `dx^n_i` for `i = 0..=H` implied by `du`.
    pub fn expand(&self, du: &DVector<f64>) -> Vec<Vec<DVector<f64>>> {
        self.gammas
            .iter()
            .zip(&self.offsets)
            .map(|(gs, cs)| gs.iter().zip(cs).map(|(g, c)| g * du + c).collect())
            .collect()
    }
}

pub fn condense(qp: &QpProblem) -> Result<CondensedQp, String> {
    qp.validate()?;
    let (h, nx, nu) = (qp.horizon, qp.n_x, qp.n_u);
    let nv = qp.n_du();
    let mut p = DMatrix::zeros(nv, nv);
    let mut q = DVector::zeros(nv);
    let mut g_rows: Vec<DVector<f64>> = Vec::new();
    let mut h_vals = Vec::new();
    let mut soft = Vec::new();
    let mut origin = Vec::new();

    for (i, rows) in qp.input_rows.iter().enumerate() {
        for r in 0..rows.len() {
            let mut row = DVector::zeros(nv);
            row.rows_mut(i * nu, nu).copy_from(&rows.jac.row(r).transpose());
            g_rows.push(row);
            h_vals.push(-rows.value[r]);
            soft.push(rows.soft);
            origin.push(RowOrigin { sample: None, stage: i });
        }
    }

    let mut gammas = Vec::with_capacity(qp.samples());
    let mut offsets = Vec::with_capacity(qp.samples());
    for n in 0..qp.samples() {
        let mut gam = vec![DMatrix::zeros(nx, nv)];
        let mut off = vec![DVector::zeros(nx)];
        for i in 0..h {
            let dy = &qp.dynamics[n][i];
            let mut next = &dy.a * &gam[i];
            {
                let mut blk = next.columns_mut(i * nu, nu);
                blk += &dy.b;
            }
            off.push(&dy.a * &off[i] + &dy.c);
            gam.push(next);
        }
        for i in 0..h {
            let c = &qp.costs[n][i];
            let gi = &gam[i];
            let qg = &c.q * gi;
            p += gi.transpose() * &qg;
            q += gi.transpose() * (&c.q * &off[i] + &c.qx);
            let sg = &c.s * gi;
            let su = &c.s * &off[i];
            {
                let mut rows = p.rows_mut(i * nu, nu);
                rows += &sg;
            }
            {
                let mut cols = p.columns_mut(i * nu, nu);
                cols += sg.transpose();
            }
            {
                let mut blk = p.view_mut((i * nu, i * nu), (nu, nu));
                blk += &c.r;
            }
            {
                let mut seg = q.rows_mut(i * nu, nu);
                seg += &c.qu + su;
            }
        }
        let (qh, qhv) = &qp.terminal[n];
        p += gam[h].transpose() * (qh * &gam[h]);
        q += gam[h].transpose() * (qh * &off[h] + qhv);

        for i in 0..h {
            let rows = &qp.state_rows[n][i];
            if rows.is_empty() {
                continue;
            }
            let jg = &rows.jac * &gam[i + 1];
            let rhs = -&rows.value - &rows.jac * &off[i + 1];
            for r in 0..rows.len() {
                g_rows.push(jg.row(r).transpose());
                h_vals.push(rhs[r]);
                soft.push(rows.soft);
                origin.push(RowOrigin {
                    sample: Some(n),
                    stage: i + 1,
                });
            }
        }
        gammas.push(gam);
        offsets.push(off);
    }
    let p = (&p + p.transpose()) * 0.5;
    let g = if g_rows.is_empty() {
        DMatrix::zeros(0, nv)
    } else {
        DMatrix::from_columns(&g_rows).transpose()
    };
    let mut dense = DenseQp::new(p, q).with_inequalities(g, DVector::from_vec(h_vals));
    dense.soft = soft;
    Ok(CondensedQp {
        dense,
        gammas,
        offsets,
        row_origin: origin,
    })
}

/// Primal step of the multi-sample QP.
#[derive(Clone, Debug)]
pub struct OcpStep {
    pub du: DVector<f64>,
    /// `dx[n][i]`, `i = 0..=H`.
    pub dx: Vec<Vec<DVector<f64>>>,
    pub solution: QpSolution,
    pub row_origin: Vec<RowOrigin>,
}

pub fn solve_condensed(qp: &QpProblem, settings: &QpSettings) -> Result<OcpStep, String> {
    let c = condense(qp)?;
    let sol = solve(&c.dense, settings)?;
    Ok(OcpStep {
        du: sol.x.clone(),
        dx: c.expand(&sol.x),
        solution: sol,
        row_origin: c.row_origin,
    })
}

/// Solves the QP in the full space `(du, dx^1, ..., dx^N)` with the
/// dynamics as equality constraints.
pub fn solve_full_space(qp: &QpProblem, settings: &QpSettings) -> Result<OcpStep, String> {
    qp.validate()?;
    let (h, nx, nu) = (qp.horizon, qp.n_x, qp.n_u);
    let ns = qp.samples();
    let nv_u = h * nu;
    let nv = nv_u + ns * h * nx;
    // dx^n_i for i = 1..=H
    let xi = |n: usize, i: usize| nv_u + (n * h + (i - 1)) * nx;
    let mut p = DMatrix::zeros(nv, nv);
    let mut q = DVector::zeros(nv);
    let mut a = DMatrix::zeros(ns * h * nx, nv);
    let mut b = DVector::zeros(ns * h * nx);
    let mut g_rows: Vec<DVector<f64>> = Vec::new();
    let mut h_vals = Vec::new();
    let mut soft = Vec::new();
    let mut origin = Vec::new();
    for (i, rows) in qp.input_rows.iter().enumerate() {
        for r in 0..rows.len() {
            let mut row = DVector::zeros(nv);
            row.rows_mut(i * nu, nu).copy_from(&rows.jac.row(r).transpose());
            g_rows.push(row);
            h_vals.push(-rows.value[r]);
            soft.push(rows.soft);
            origin.push(RowOrigin { sample: None, stage: i });
        }
    }
    for n in 0..ns {
        for i in 0..h {
            let c = &qp.costs[n][i];
            let ui = i * nu;
            p.view_mut((ui, ui), (nu, nu)).add_assign_from(&c.r);
            q.rows_mut(ui, nu).add_assign_from(&c.qu);
            if i > 0 {
                let x = xi(n, i);
                p.view_mut((x, x), (nx, nx)).add_assign_from(&c.q);
                p.view_mut((ui, x), (nu, nx)).add_assign_from(&c.s);
                p.view_mut((x, ui), (nx, nu)).add_assign_from(&c.s.transpose());
                q.rows_mut(x, nx).add_assign_from(&c.qx);
            }
            // dx_{i+1} - A dx_i - B du_i = c
            let er = (n * h + i) * nx;
            let dy = &qp.dynamics[n][i];
            for k in 0..nx {
                a[(er + k, xi(n, i + 1) + k)] = 1.0;
            }
            if i > 0 {
                a.view_mut((er, xi(n, i)), (nx, nx)).add_assign_from(&(-&dy.a));
            }
            a.view_mut((er, ui), (nx, nu)).add_assign_from(&(-&dy.b));
            b.rows_mut(er, nx).copy_from(&dy.c);

            let rows = &qp.state_rows[n][i];
            for r in 0..rows.len() {
                let mut row = DVector::zeros(nv);
                row.rows_mut(xi(n, i + 1), nx).copy_from(&rows.jac.row(r).transpose());
                g_rows.push(row);
                h_vals.push(-rows.value[r]);
                soft.push(rows.soft);
                origin.push(RowOrigin {
                    sample: Some(n),
                    stage: i + 1,
                });
            }
        }
        let (qh, qhv) = &qp.terminal[n];
        let x = xi(n, h);
        p.view_mut((x, x), (nx, nx)).add_assign_from(qh);
        q.rows_mut(x, nx).add_assign_from(qhv);
    }
    let g = if g_rows.is_empty() {
        DMatrix::zeros(0, nv)
    } else {
        DMatrix::from_columns(&g_rows).transpose()
    };
    let mut dense = DenseQp::new(p, q).with_equalities(a, b).with_inequalities(g, DVector::from_vec(h_vals));
    dense.soft = soft;
    let sol = solve(&dense, settings)?;
    let du = sol.x.rows(0, nv_u).into_owned();
    let dx = (0..ns)
        .map(|n| {
            std::iter::once(DVector::zeros(nx))
                .chain((1..=h).map(|i| sol.x.rows(xi(n, i), nx).into_owned()))
                .collect()
        })
        .collect();
    Ok(OcpStep {
        du,
        dx,
        solution: sol,
        row_origin: origin,
    })
}

trait AddAssignFrom<T> {
    fn add_assign_from(self, other: T);
}

impl<'a, R: nalgebra::Dim, C: nalgebra::Dim, RS: nalgebra::Dim, CS: nalgebra::Dim>
    AddAssignFrom<&DMatrix<f64>> for nalgebra::Matrix<f64, R, C, nalgebra::ViewStorageMut<'a, f64, R, C, RS, CS>>
{
    fn add_assign_from(mut self, other: &DMatrix<f64>) {
        for r in 0..other.nrows() {
            for c in 0..other.ncols() {
                self[(r, c)] += other[(r, c)];
            }
        }
    }
}

impl<'a, R: nalgebra::Dim, C: nalgebra::Dim, RS: nalgebra::Dim, CS: nalgebra::Dim>
    AddAssignFrom<&DVector<f64>> for nalgebra::Matrix<f64, R, C, nalgebra::ViewStorageMut<'a, f64, R, C, RS, CS>>
{
    fn add_assign_from(mut self, other: &DVector<f64>) {
        for r in 0..other.len() {
            self[(r, 0)] += other[r];
        }
    }
}
