//! Convex QP solver and the multi-sample OCP structure around it.

mod condense;
mod ipm;

pub use condense::{
    condense, solve_condensed, solve_full_space, CondensedQp, LinearRows, OcpStep, QpProblem, RowOrigin, StageCost,
    StageDynamics,
};
pub use ipm::{solve, DenseQp, QpSettings, QpSolution, QpStatus, Residuals};
