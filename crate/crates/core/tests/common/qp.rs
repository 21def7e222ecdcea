//! Random QPs and brute-force oracles shared by the QP tests.

use gpmpc::qp::{DenseQp, LinearRows, QpProblem, StageCost, StageDynamics};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Strictly convex QP with a known strictly feasible point.
pub fn random_qp(rng: &mut ChaCha8Rng) -> DenseQp {
    let n = rng.random_range(2..=30);
    let mi = rng.random_range(0..=20);
    let me = rng.random_range(0..=n.min(3) - 1);
    let m = randn(rng, n, n);
    let p = m.transpose() * &m / n as f64 + DMatrix::identity(n, n) * 0.1;
    let x_center = randn(rng, n, 1).column(0) * 2.0;
    let q = -(&p * &x_center);
    let x_feas = randn(rng, n, 1).column(0) * 0.3;
    let a = randn(rng, me, n);
    let b = &a * &x_feas;
    let g = randn(rng, mi, n);
    let h = &g * &x_feas + DVector::from_fn(mi, |_, _| rng.random_range(0.1..1.0));
    DenseQp::new(p, q.into_owned()).with_equalities(a, b).with_inequalities(g, h)
}

/// Enumerates active sets by increasing size and returns the first KKT
/// point that is primal and dual feasible.
pub fn active_set_oracle(qp: &DenseQp) -> DVector<f64> {
    let n = qp.n();
    let me = qp.b.len();
    let mi = qp.h.len();
    for k in 0..=mi.min(n - me) {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            let dim = n + me + k;
            let mut kkt = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
            rhs.rows_mut(0, n).copy_from(&(-&qp.q));
            for e in 0..me {
                for c in 0..n {
                    kkt[(n + e, c)] = qp.a[(e, c)];
                    kkt[(c, n + e)] = qp.a[(e, c)];
                }
                rhs[n + e] = qp.b[e];
            }
            for (s, &j) in idx.iter().enumerate() {
                for c in 0..n {
                    kkt[(n + me + s, c)] = qp.g[(j, c)];
                    kkt[(c, n + me + s)] = qp.g[(j, c)];
                }
                rhs[n + me + s] = qp.h[j];
            }
            if let Some(sol) = kkt.lu().solve(&rhs) {
                let x = sol.rows(0, n).into_owned();
                let lam = sol.rows(n + me, k);
                let primal = (&qp.g * &x - &qp.h).iter().all(|v| *v <= 1e-9);
                let dual = lam.iter().all(|v| *v >= -1e-9);
                if primal && dual && sol.iter().all(|v| v.is_finite()) {
                    return x;
                }
            }
            // next combination
            let mut i = k;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if idx[i] < mi - k + i {
                    idx[i] += 1;
                    for j in i + 1..k {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    i = usize::MAX;
                    break;
                }
            }
            if k == 0 || i == usize::MAX {
                break;
            }
        }
    }
    panic!("oracle found no KKT point");
}


fn psd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let m = randn(rng, n, n);
    m.transpose() * &m / n as f64 + DMatrix::identity(n, n) * floor
}

/// Multi-sample OCP QP with soft state rows and a hard input box that
/// contains `du = 0`.
pub fn random_ocp_qp(seed: u64) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_x = rng.random_range(2..=3);
    let n_u = rng.random_range(1..=2);
    let horizon = rng.random_range(2..=4);
    let samples = rng.random_range(1..=3);
    let mut qp = QpProblem {
        n_x,
        n_u,
        horizon,
        costs: Vec::new(),
        terminal: Vec::new(),
        dynamics: Vec::new(),
        state_rows: Vec::new(),
        input_rows: Vec::new(),
    };
    for _ in 0..samples {
        let mut costs = Vec::new();
        let mut dynamics = Vec::new();
        let mut rows = Vec::new();
        for _ in 0..horizon {
            let mut c = StageCost::zeros(n_x, n_u);
            c.q = psd(&mut rng, n_x, 0.0);
            c.r = psd(&mut rng, n_u, 0.1);
            c.qx = randn(&mut rng, n_x, 1).column(0).into_owned();
            c.qu = randn(&mut rng, n_u, 1).column(0).into_owned();
            costs.push(c);
            dynamics.push(StageDynamics {
                a: DMatrix::identity(n_x, n_x) + randn(&mut rng, n_x, n_x) * 0.3,
                b: randn(&mut rng, n_x, n_u),
                c: randn(&mut rng, n_x, 1).column(0) * 0.1,
            });
            let k = rng.random_range(0..=2);
            rows.push(LinearRows {
                jac: randn(&mut rng, k, n_x),
                value: randn(&mut rng, k, 1).column(0) * 0.5,
                soft: Some(rng.random_range(1.0..50.0)),
            });
        }
        qp.costs.push(costs);
        qp.dynamics.push(dynamics);
        qp.state_rows.push(rows);
        qp.terminal.push((psd(&mut rng, n_x, 0.0), randn(&mut rng, n_x, 1).column(0).into_owned()));
    }
    for _ in 0..horizon {
        let mut jac = DMatrix::zeros(2 * n_u, n_u);
        for j in 0..n_u {
            jac[(2 * j, j)] = 1.0;
            jac[(2 * j + 1, j)] = -1.0;
        }
        let value = DVector::from_fn(2 * n_u, |_, _| -rng.random_range(0.2..1.5));
        qp.input_rows.push(LinearRows { jac, value, soft: None });
    }
    qp
}
