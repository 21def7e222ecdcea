//! Gaussian-process regression with value and gradient observations.

mod dataset;
mod fit;
mod kernel;
mod posterior;

pub use dataset::{GpDataset, Observation};
pub use fit::{fit_hyperparameters, FitOptions};
pub use kernel::{se_kernel, se_kernel_derivative_block, KernelParams};
pub use posterior::{
    confidence_bounds, posterior, BlockFactor, Conditional, ConfidenceParams, FactoredGp, Posterior, PosteriorQuery,
};

pub(crate) use posterior::flatten;
