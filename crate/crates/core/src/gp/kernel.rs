use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared-exponential (ARD) kernel hyperparameters of one scalar GP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    /// Signal standard deviation.
    pub output_scale: f64,
    /// Measurement noise variance of the training targets.
    pub noise_var: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, output_scale: f64, noise_var: f64) -> Result<Self> {
        let p = Self {
            lengthscales,
            output_scale,
            noise_var,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(Error::InvalidArgument("kernel needs at least one lengthscale".into()));
        }
        if self.lengthscales.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "lengthscales must be positive, got {:?}",
                self.lengthscales
            )));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "output scale must be positive, got {}",
                self.output_scale
            )));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be non-negative, got {}",
                self.noise_var
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn signal_var(&self) -> f64 {
        self.output_scale * self.output_scale
    }

    fn check_dims(&self, a: &[f64], b: &[f64]) -> Result<()> {
        if a.len() != self.input_dim() || b.len() != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "kernel expects {}-dimensional inputs, got {} and {}",
                self.input_dim(),
                a.len(),
                b.len()
            )));
        }
        Ok(())
    }
}

/// `sf^2 exp(-1/2 sum_d (a_d - b_d)^2 / l_d^2)`.
pub fn se_kernel(a: &[f64], b: &[f64], params: &KernelParams) -> Result<f64> {
    params.check_dims(a, b)?;
    Ok(se_unchecked(a, b, params))
}

#[inline]
pub(crate) fn se_unchecked(a: &[f64], b: &[f64], params: &KernelParams) -> f64 {
    let mut r2 = 0.0;
    for ((x, y), l) in a.iter().zip(b).zip(&params.lengthscales) {
        let d = (x - y) / l;
        r2 += d * d;
    }
    params.signal_var() * (-0.5 * r2).exp()
}

/// Covariance block between `[g(a), dg/dz(a)]` and `[g(b), dg/dz(b)]`.
///
/// Entry `(0, 0)` is `k(a, b)`, `(0, 1+e)` is `dk/db_e`, `(1+d, 0)` is
/// `dk/da_d` and `(1+d, 1+e)` is `d^2 k / da_d db_e`.
pub fn se_kernel_derivative_block(a: &[f64], b: &[f64], params: &KernelParams) -> Result<DMatrix<f64>> {
    params.check_dims(a, b)?;
    let n = a.len() + 1;
    let mut out = DMatrix::zeros(n, n);
    let mut buf = vec![0.0; n * n];
    derivative_block_into(a, b, params, &mut buf);
    for r in 0..n {
        for c in 0..n {
            out[(r, c)] = buf[r * n + c];
        }
    }
    Ok(out)
}

/// Row-major variant of [`se_kernel_derivative_block`] writing into `out`
/// (length `(nz+1)^2`), used on hot paths.
#[inline]
pub(crate) fn derivative_block_into(a: &[f64], b: &[f64], params: &KernelParams, out: &mut [f64]) {
    let nz = a.len();
    let n = nz + 1;
    let k = se_unchecked(a, b, params);
    let scaled = |d: usize| (a[d] - b[d]) / (params.lengthscales[d] * params.lengthscales[d]);
    out[0] = k;
    for e in 0..nz {
        out[1 + e] = k * scaled(e);
    }
    for d in 0..nz {
        let sd = scaled(d);
        out[(1 + d) * n] = -k * sd;
        let inv_l2 = 1.0 / (params.lengthscales[d] * params.lengthscales[d]);
        for e in 0..nz {
            let delta = if d == e { inv_l2 } else { 0.0 };
            out[(1 + d) * n + 1 + e] = k * (delta - sd * scaled(e));
        }
    }
}
