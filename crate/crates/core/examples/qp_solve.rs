//! A small QP with one hard bound and one soft (L1-penalized) row that the
//! hard bound makes infeasible.

use gpmpc::qp::{solve, DenseQp, QpSettings};
use nalgebra::{dmatrix, dvector};

fn main() {
    // min (x0 - 2)^2 + (x1 - 1)^2  s.t.  x0 <= 1 (hard), x0 + x1 >= 3 (soft)
    let mut qp = DenseQp::new(dmatrix![2.0, 0.0; 0.0, 2.0], dvector![-4.0, -2.0])
        .with_inequalities(dmatrix![1.0, 0.0; -1.0, -1.0], dvector![1.0, -3.0]);
    for rho in [0.5, 100.0] {
        qp.soft = vec![None, Some(rho)];
        match solve(&qp, &QpSettings::default()) {
            Ok(sol) => println!(
                "rho {rho:>5}: x = [{:.4}, {:.4}], slack {:.4}, {:?} after {} iterations",
                sol.x[0], sol.x[1], sol.t[1], sol.status, sol.iterations
            ),
            Err(e) => println!("rho {rho}: {e}"),
        }
    }
}
