use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::GpDataset;
use super::kernel::{derivative_block_into, se_unchecked, KernelParams};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, cholesky_jittered_scaled, PackedCholesky};

/// Test inputs of a posterior query.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorQuery {
    pub points: Vec<Vec<f64>>,
    /// Also return the gradient components, interleaved per point as
    /// `[g(z_1), dg/dz(z_1), g(z_2), ...]`.
    pub with_derivatives: bool,
}

impl PosteriorQuery {
    pub fn values(points: Vec<Vec<f64>>) -> Self {
        Self {
            points,
            with_derivatives: false,
        }
    }

    pub fn with_derivatives(points: Vec<Vec<f64>>) -> Self {
        Self {
            points,
            with_derivatives: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Truncation level of the confidence set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceParams {
    pub sqrt_beta: f64,
    /// Failure probability `p` the multiplier was chosen for. Informational.
    #[serde(default)]
    pub failure_prob: Option<f64>,
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        Self {
            sqrt_beta: 2.5,
            failure_prob: None,
        }
    }
}

impl ConfidenceParams {
    pub fn new(sqrt_beta: f64) -> Result<Self> {
        let c = Self {
            sqrt_beta,
            failure_prob: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sqrt_beta > 0.0 && self.sqrt_beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sqrt_beta must be positive, got {}",
                self.sqrt_beta
            )));
        }
        if let Some(p) = self.failure_prob {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidArgument(format!("failure probability {p} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Moments of a block of query rows given the rows already conditioned on.
#[derive(Clone, Debug)]
pub struct Conditional {
    /// `(L^{-1} K_{X,Q})^T`, stored `m x n`. Its column-major buffer is the
    /// row-major `n x m` solve result.
    pub cross_t: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Factor of the Schur complement of a new block, including its noise.
#[derive(Clone, Debug)]
pub struct BlockFactor {
    pub factor: DMatrix<f64>,
    /// Effective per-row noise variance after jitter.
    pub noise: Vec<f64>,
}

/// GP conditioned on a growing set of value / value+gradient rows.
///
/// Holds the Cholesky factor of the noisy Gram matrix and `L^{-1} y`, and
/// grows both when a block of rows is committed.
#[derive(Clone, Debug)]
pub struct FactoredGp {
    params: KernelParams,
    inputs: Vec<f64>,
    has_grad: Vec<bool>,
    targets: Vec<f64>,
    noise: Vec<f64>,
    factor: PackedCholesky,
    alpha: Vec<f64>,
}

impl FactoredGp {
    pub fn prior(params: KernelParams) -> Self {
        Self {
            params,
            inputs: Vec::new(),
            has_grad: Vec::new(),
            targets: Vec::new(),
            noise: Vec::new(),
            factor: PackedCholesky::default(),
            alpha: Vec::new(),
        }
    }

    pub fn from_dataset(data: &GpDataset, params: &KernelParams) -> Result<Self> {
        params.validate()?;
        if data.input_dim() != params.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "dataset has input dimension {}, kernel {}",
                data.input_dim(),
                params.input_dim()
            )));
        }
        let mut gp = Self::prior(params.clone());
        for obs in data.observations() {
            gp.inputs.extend_from_slice(&obs.input);
            gp.has_grad.push(obs.gradient.is_some());
            gp.targets.push(obs.value);
            let nv = obs.noise_var.unwrap_or(params.noise_var);
            gp.noise.push(nv);
            if let Some(g) = &obs.gradient {
                gp.targets.extend_from_slice(g);
                gp.noise.extend(std::iter::repeat_n(nv, g.len()));
            }
        }
        let n = gp.targets.len();
        if n == 0 {
            return Ok(gp);
        }
        let k = kernel_matrix(&gp.params, &gp.inputs, &gp.has_grad, &gp.inputs, &gp.has_grad);
        let mut gram = DMatrix::from_row_slice(n, n, &k);
        for (i, nv) in gp.noise.iter().enumerate() {
            gram[(i, i)] += nv;
        }
        let ch = cholesky_jittered(&gram)?;
        for nv in &mut gp.noise {
            *nv += ch.jitter;
        }
        gp.factor = PackedCholesky::from_dense(&ch.factor);
        gp.alpha = gp.targets.clone();
        gp.factor.forward_solve(&mut gp.alpha);
        Ok(gp)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    /// Number of conditioned scalar rows.
    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    /// Number of conditioned input points.
    pub fn points(&self) -> usize {
        self.has_grad.len()
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    fn check_points(&self, points: &[f64]) -> Result<usize> {
        let nz = self.input_dim();
        if points.is_empty() || points.len() % nz != 0 {
            return Err(Error::InvalidArgument(format!(
                "query buffer of length {} is not a non-empty multiple of input dimension {nz}",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite query point".into()));
        }
        Ok(points.len() / nz)
    }

    /// Prior covariance of the query rows.
    pub fn prior_cov(&self, points: &[f64], with_grad: bool) -> DMatrix<f64> {
        let n_q = points.len() / self.input_dim();
        let flags = vec![with_grad; n_q];
        let k = kernel_matrix(&self.params, points, &flags, points, &flags);
        let m = rows_of(&flags, self.input_dim());
        DMatrix::from_row_slice(m, m, &k)
    }

    /// Conditional mean and covariance of the query rows. `points` is a
    /// flat buffer of input points.
    pub fn conditional(&self, points: &[f64], with_grad: bool) -> Result<Conditional> {
        let n_q = self.check_points(points)?;
        let nz = self.input_dim();
        let flags = vec![with_grad; n_q];
        let m = rows_of(&flags, nz);
        let n = self.rows();
        let mut cross = kernel_matrix(&self.params, &self.inputs, &self.has_grad, points, &flags);
        self.factor.forward_solve_rows(&mut cross, m);
        let cross_t = DMatrix::from_vec(m, n, cross);
        let mean = if n == 0 {
            DVector::zeros(m)
        } else {
            &cross_t * DVector::from_column_slice(&self.alpha)
        };
        let mut cov = self.prior_cov(points, with_grad);
        if n > 0 {
            cov -= &cross_t * cross_t.transpose();
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(Conditional { cross_t, mean, cov })
    }

    /// Factorizes `cov + diag(noise)` of a conditional block. Jitter, when
    /// needed, is scaled by the prior signal variance.
    pub fn block_factor(&self, cond: &Conditional, noise: &[f64]) -> Result<BlockFactor> {
        let m = cond.cov.nrows();
        debug_assert_eq!(noise.len(), m);
        let mut s = cond.cov.clone();
        for i in 0..m {
            s[(i, i)] += noise[i];
        }
        let ch = cholesky_jittered_scaled(&s, self.params.signal_var())?;
        Ok(BlockFactor {
            factor: ch.factor,
            noise: noise.iter().map(|v| v + ch.jitter).collect(),
        })
    }

    /// Conditions on `targets` observed at the query rows of `cond`.
    pub fn commit(
        &mut self,
        points: &[f64],
        with_grad: bool,
        cond: &Conditional,
        block: &BlockFactor,
        targets: &[f64],
    ) -> Result<()> {
        let n_q = self.check_points(points)?;
        let m = cond.mean.len();
        if targets.len() != m || block.factor.nrows() != m || m != rows_of(&vec![with_grad; n_q], self.input_dim()) {
            return Err(Error::InvalidArgument(format!(
                "commit of {m} rows got {} targets",
                targets.len()
            )));
        }
        let resid = DVector::from_iterator(m, targets.iter().zip(cond.mean.iter()).map(|(y, mu)| y - mu));
        let alpha_new = block
            .factor
            .solve_lower_triangular(&resid)
            .ok_or_else(|| Error::Sampling("singular block factor".into()))?;
        self.factor.append(cond.cross_t.as_slice(), &block.factor);
        self.alpha.extend(alpha_new.iter());
        self.inputs.extend_from_slice(points);
        self.has_grad.extend(std::iter::repeat_n(with_grad, n_q));
        self.targets.extend_from_slice(targets);
        self.noise.extend_from_slice(&block.noise);
        Ok(())
    }

    /// Conditions on a block of observations with the given per-row noise.
    pub fn condition_on(&mut self, points: &[f64], with_grad: bool, targets: &[f64], noise: &[f64]) -> Result<()> {
        let cond = self.conditional(points, with_grad)?;
        let block = self.block_factor(&cond, noise)?;
        self.commit(points, with_grad, &cond, &block, targets)
    }

    /// Posterior mean and variance of the function values at `points`.
    pub fn predict_values(&self, points: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n_q = self.check_points(points)?;
        let nz = self.input_dim();
        let flags = vec![false; n_q];
        let n = self.rows();
        let mut cross = kernel_matrix(&self.params, &self.inputs, &self.has_grad, points, &flags);
        self.factor.forward_solve_rows(&mut cross, n_q);
        let mut mean = vec![0.0; n_q];
        let mut var: Vec<f64> = (0..n_q)
            .map(|j| {
                let z = &points[j * nz..(j + 1) * nz];
                se_unchecked(z, z, &self.params)
            })
            .collect();
        for r in 0..n {
            let row = &cross[r * n_q..(r + 1) * n_q];
            for j in 0..n_q {
                mean[j] += row[j] * self.alpha[r];
                var[j] -= row[j] * row[j];
            }
        }
        for v in &mut var {
            *v = v.max(0.0);
        }
        Ok((mean, var))
    }

    /// `log p(y)` of the conditioned rows under the prior.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.rows() as f64;
        let fit: f64 = self.alpha.iter().map(|a| a * a).sum();
        -0.5 * fit - self.factor.log_diag_sum() - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Confidence interval `mu(z) -/+ sqrt_beta * sigma(z)`.
    pub fn confidence_interval(&self, z: &[f64], conf: &ConfidenceParams) -> Result<(f64, f64)> {
        conf.validate()?;
        let (mu, var) = self.predict_values(z)?;
        let w = conf.sqrt_beta * var[0].sqrt();
        Ok((mu[0] - w, mu[0] + w))
    }
}

fn rows_of(flags: &[bool], nz: usize) -> usize {
    flags.iter().map(|&g| if g { nz + 1 } else { 1 }).sum()
}

/// Row-major kernel matrix between two tagged point sets.
pub(crate) fn kernel_matrix(params: &KernelParams, a: &[f64], a_grad: &[bool], b: &[f64], b_grad: &[bool]) -> Vec<f64> {
    let nz = params.input_dim();
    let nb = nz + 1;
    let rows = rows_of(a_grad, nz);
    let cols = rows_of(b_grad, nz);
    let mut out = vec![0.0; rows * cols];
    let mut blk = vec![0.0; nb * nb];
    let col_offsets: Vec<usize> = b_grad
        .iter()
        .scan(0usize, |acc, &g| {
            let off = *acc;
            *acc += if g { nb } else { 1 };
            Some(off)
        })
        .collect();
    let mut r0 = 0;
    for (o, &ga) in a_grad.iter().enumerate() {
        let za = &a[o * nz..(o + 1) * nz];
        let ra = if ga { nb } else { 1 };
        for (q, &gb) in b_grad.iter().enumerate() {
            let zb = &b[q * nz..(q + 1) * nz];
            let c0 = col_offsets[q];
            if !ga && !gb {
                out[r0 * cols + c0] = se_unchecked(za, zb, params);
                continue;
            }
            derivative_block_into(za, zb, params, &mut blk);
            let cb = if gb { nb } else { 1 };
            for i in 0..ra {
                let dst = &mut out[(r0 + i) * cols + c0..(r0 + i) * cols + c0 + cb];
                dst.copy_from_slice(&blk[i * nb..i * nb + cb]);
            }
        }
        r0 += ra;
    }
    out
}

/// Posterior of the GP conditioned on `data` at the query points.
pub fn posterior(data: &GpDataset, query: &PosteriorQuery, params: &KernelParams) -> Result<Posterior> {
    if query.points.is_empty() {
        return Err(Error::InvalidArgument("posterior query needs at least one point".into()));
    }
    let gp = FactoredGp::from_dataset(data, params)?;
    let flat = flatten(&query.points, params.input_dim())?;
    let cond = gp.conditional(&flat, query.with_derivatives)?;
    Ok(Posterior {
        mean: cond.mean,
        covariance: cond.cov,
    })
}

/// Lower and upper confidence bound of the function value at `z`.
pub fn confidence_bounds(
    z: &[f64],
    data: &GpDataset,
    params: &KernelParams,
    conf: &ConfidenceParams,
) -> Result<(f64, f64)> {
    FactoredGp::from_dataset(data, params)?.confidence_interval(z, conf)
}

pub(crate) fn flatten(points: &[Vec<f64>], nz: usize) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(points.len() * nz);
    for p in points {
        if p.len() != nz {
            return Err(Error::InvalidArgument(format!(
                "query point has dimension {}, expected {nz}",
                p.len()
            )));
        }
        flat.extend_from_slice(p);
    }
    Ok(flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::kernel::se_kernel;

    fn p1(l: f64, sf: f64, nv: f64) -> KernelParams {
        KernelParams::new(vec![l], sf, nv).unwrap()
    }

    #[test]
    fn empty_dataset_returns_prior() {
        let params = KernelParams::new(vec![0.5, 1.0], 1.3, 1e-6).unwrap();
        let q = PosteriorQuery::with_derivatives(vec![vec![0.0, 0.1], vec![0.4, -0.2]]);
        let post = posterior(&GpDataset::new(2), &q, &params).unwrap();
        assert!(post.mean.amax() == 0.0);
        let gp = FactoredGp::prior(params);
        let prior = gp.prior_cov(&[0.0, 0.1, 0.4, -0.2], true);
        assert!((post.covariance - prior).amax() < 1e-15);
    }

    #[test]
    fn single_observation_interpolates_as_noise_vanishes() {
        let mut d = GpDataset::new(1);
        d.push_value(vec![0.3], 1.7).unwrap();
        for nv in [1e-4, 1e-8, 1e-12] {
            let post = posterior(&d, &PosteriorQuery::values(vec![vec![0.3]]), &p1(0.8, 1.2, nv)).unwrap();
            // closed form: mean = k/(k+nv) y, var = k - k^2/(k+nv)
            let k: f64 = 1.44;
            assert!((post.mean[0] - k / (k + nv) * 1.7).abs() < 1e-12);
            assert!((post.covariance[(0, 0)] - (k - k * k / (k + nv))).abs() < 1e-12);
            assert!(post.covariance[(0, 0)] <= nv + 1e-15);
        }
    }

    #[test]
    fn gradient_observation_is_reproduced() {
        let mut d = GpDataset::new(2);
        d.push_value_gradient(vec![0.1, -0.3], 0.5, vec![1.5, -2.0]).unwrap();
        let params = KernelParams::new(vec![0.9, 1.4], 1.1, 1e-8).unwrap();
        let post = posterior(&d, &PosteriorQuery::with_derivatives(vec![vec![0.1, -0.3]]), &params).unwrap();
        assert!((post.mean[0] - 0.5).abs() < 1e-6);
        assert!((post.mean[1] - 1.5).abs() < 1e-6);
        assert!((post.mean[2] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn confidence_bounds_of_the_prior() {
        let params = p1(1.0, 0.7, 1e-6);
        let conf = ConfidenceParams::new(2.5).unwrap();
        let (lo, hi) = confidence_bounds(&[0.0], &GpDataset::new(1), &params, &conf).unwrap();
        assert!((lo + 2.5 * 0.7).abs() < 1e-12);
        assert!((hi - 2.5 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn confidence_interval_collapses_at_noise_free_point() {
        let mut d = GpDataset::new(1);
        d.push_value(vec![0.0], 0.4).unwrap();
        let params = p1(1.0, 1.0, 0.0);
        let (lo, hi) = confidence_bounds(&[0.0], &d, &params, &ConfidenceParams::default()).unwrap();
        assert!((hi - lo).abs() < 1e-6);
        assert!((lo - 0.4).abs() < 1e-6);
    }

    #[test]
    fn confidence_width_matches_direct_formula() {
        // independent recomputation of sigma(z) from the textbook formula
        let xs = [-1.0, -0.2, 0.5, 1.3];
        let ys = [0.3, -0.1, 0.8, 0.2];
        let params = p1(0.6, 1.1, 1e-3);
        let mut d = GpDataset::new(1);
        for (x, y) in xs.iter().zip(ys) {
            d.push_value(vec![*x], y).unwrap();
        }
        let z = 0.1;
        let k = DMatrix::from_fn(4, 4, |i, j| {
            se_kernel(&[xs[i]], &[xs[j]], &params).unwrap() + if i == j { 1e-3 } else { 0.0 }
        });
        let ks = DVector::from_fn(4, |i, _| se_kernel(&[xs[i]], &[z], &params).unwrap());
        let var = 1.21 - (ks.transpose() * k.try_inverse().unwrap() * &ks)[(0, 0)];
        let conf = ConfidenceParams::new(2.0).unwrap();
        let (lo, hi) = confidence_bounds(&[z], &d, &params, &conf).unwrap();
        assert!(((hi - lo) - 2.0 * 2.0 * var.sqrt()).abs() < 1e-10);
        assert!(lo <= hi);
    }

    #[test]
    fn empty_query_is_rejected() {
        let params = p1(1.0, 1.0, 0.0);
        assert!(posterior(&GpDataset::new(1), &PosteriorQuery::values(vec![]), &params).is_err());
    }
}
