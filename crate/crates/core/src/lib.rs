pub mod error;
pub mod gp;
pub mod linalg;

pub use error::{Error, Result};
pub mod sampler;
pub mod dynamics;
pub mod qp;
pub mod sqp;
pub mod mpc;
pub mod baselines;
pub mod experiments;
