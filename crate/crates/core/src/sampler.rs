//! Consistent sampling of GP dynamics by sequential conditioning.
//!
//! A [`SampledDynamics`] realizes one function drawn from the truncated
//! posterior. Each call to [`SampledDynamics::draw_joint`] draws values and
//! gradients at new query points conditioned on everything this sample has
//! drawn before, then remembers the draw. Re-querying an input therefore
//! reproduces the earlier value.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{ConfidenceParams, FactoredGp, GpDataset, KernelParams};

pub const DEFAULT_MAX_REDRAWS: usize = 100;
/// Noise variance attached to sampled rows.
pub const DEFAULT_SAMPLE_NOISE_VAR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub confidence: ConfidenceParams,
    /// Variance added to the diagonal of every sampled block. Draws are of
    /// `g + e` with `e ~ N(0, sample_noise_var)`, which is also the noise the
    /// row carries when it is conditioned on later.
    pub sample_noise_var: f64,
    /// Reject draws whose value components leave the confidence band.
    pub truncate: bool,
    pub max_redraws: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            confidence: ConfidenceParams::default(),
            sample_noise_var: DEFAULT_SAMPLE_NOISE_VAR,
            truncate: true,
            max_redraws: DEFAULT_MAX_REDRAWS,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.confidence.validate()?;
        if !(self.sample_noise_var >= 0.0 && self.sample_noise_var.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample_noise_var must be non-negative, got {}",
                self.sample_noise_var
            )));
        }
        Ok(())
    }
}

/// Posterior mean, its Jacobian and the value variance of all output
/// dimensions at one input.
#[derive(Clone, Debug)]
pub struct MeanPrediction {
    pub mean: DVector<f64>,
    /// `n_g x n_z`.
    pub jacobian: DMatrix<f64>,
    pub variance: DVector<f64>,
}

/// The learned residual: one independent scalar GP per output dimension,
/// conditioned on the base training set.
#[derive(Clone, Debug)]
pub struct GpModel {
    base: Vec<FactoredGp>,
    input_dim: usize,
    config: SamplerConfig,
}

impl GpModel {
    pub fn new(datasets: &[GpDataset], params: &[KernelParams], config: SamplerConfig) -> Result<Self> {
        if datasets.is_empty() || datasets.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} datasets but {} kernel parameter sets",
                datasets.len(),
                params.len()
            )));
        }
        let base = datasets
            .iter()
            .zip(params)
            .map(|(d, p)| FactoredGp::from_dataset(d, p))
            .collect::<Result<Vec<_>>>()?;
        Self::from_factored(base, config)
    }

    pub fn from_factored(base: Vec<FactoredGp>, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let input_dim = base
            .first()
            .ok_or_else(|| Error::InvalidArgument("model needs at least one output dimension".into()))?
            .input_dim();
        if base.iter().any(|g| g.input_dim() != input_dim) {
            return Err(Error::InvalidArgument("output dimensions disagree on input dimension".into()));
        }
        if base.len() > 256 {
            return Err(Error::InvalidArgument("at most 256 output dimensions".into()));
        }
        Ok(Self {
            base,
            input_dim,
            config,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.base.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn base(&self, dim: usize) -> &FactoredGp {
        &self.base[dim]
    }

    /// Rows of the base training set, per output dimension.
    pub fn base_rows(&self) -> usize {
        self.base.iter().map(FactoredGp::rows).max().unwrap_or(0)
    }

    /// Confidence band `mu -/+ sqrt_beta sigma` of dimension `dim` under the
    /// base data at each point of the flat buffer.
    pub fn bounds(&self, dim: usize, points: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mu, var) = self.base[dim].predict_values(points)?;
        let sb = self.config.confidence.sqrt_beta;
        let lo = mu.iter().zip(&var).map(|(m, v)| m - sb * v.sqrt()).collect();
        let hi = mu.iter().zip(&var).map(|(m, v)| m + sb * v.sqrt()).collect();
        Ok((lo, hi))
    }

    pub fn mean_and_jacobian(&self, z: &[f64]) -> Result<MeanPrediction> {
        let ng = self.output_dim();
        let nz = self.input_dim;
        let mut out = MeanPrediction {
            mean: DVector::zeros(ng),
            jacobian: DMatrix::zeros(ng, nz),
            variance: DVector::zeros(ng),
        };
        for (d, gp) in self.base.iter().enumerate() {
            let c = gp.conditional(z, true)?;
            out.mean[d] = c.mean[0];
            out.variance[d] = c.cov[(0, 0)].max(0.0);
            for e in 0..nz {
                out.jacobian[(d, e)] = c.mean[1 + e];
            }
        }
        Ok(out)
    }
}

/// Per-(sample, output dimension) random stream derived from a master seed.
pub fn stream_rng(master_seed: u64, sample_id: u64, dim: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((sample_id << 8) | dim as u64);
    rng
}

/// Draws at a batch of query points, for every output dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSample {
    pub input_dim: usize,
    pub n_points: usize,
    /// `values[d][i]` is the value of dimension `d` at point `i`.
    pub values: Vec<Vec<f64>>,
    /// `gradients[d]` holds `n_points * input_dim` entries, point-major.
    /// Empty for value-only draws.
    pub gradients: Vec<Vec<f64>>,
    /// Some value component was clamped after the redraw budget ran out.
    pub clamped: bool,
}

impl JointSample {
    pub fn value(&self, dim: usize, point: usize) -> f64 {
        self.values[dim][point]
    }

    pub fn gradient(&self, dim: usize, point: usize) -> &[f64] {
        let nz = self.input_dim;
        &self.gradients[dim][point * nz..(point + 1) * nz]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerStats {
    /// Per-dimension block draws requested.
    pub draws: u64,
    /// Gaussian vectors drawn, including rejected ones.
    pub attempts: u64,
    pub clamped: u64,
}

impl SamplerStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            1.0
        } else {
            (self.draws - self.clamped) as f64 / self.attempts as f64
        }
    }

    pub fn merge(&mut self, other: &SamplerStats) {
        self.draws += other.draws;
        self.attempts += other.attempts;
        self.clamped += other.clamped;
    }
}

#[derive(Clone, Debug)]
struct DimState {
    gp: FactoredGp,
    rng: ChaCha8Rng,
}

#[derive(Clone, Debug)]
struct Group {
    points: Vec<f64>,
    with_grad: bool,
    targets: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
}

enum Eta<'a> {
    Random,
    Fixed(&'a [Vec<f64>]),
}

struct DimDraw {
    targets: Vec<f64>,
    noise: Vec<f64>,
    attempts: u64,
    clamped: bool,
}

/// One function sample `g^n` of the truncated GP, grown by conditioning.
#[derive(Clone, Debug)]
pub struct SampledDynamics {
    model: Arc<GpModel>,
    sample_id: u64,
    dims: Vec<DimState>,
    groups: Vec<Group>,
    stats: SamplerStats,
}

impl SampledDynamics {
    pub fn new(model: Arc<GpModel>, master_seed: u64, sample_id: u64) -> Self {
        let dims = (0..model.output_dim())
            .map(|d| DimState {
                gp: model.base[d].clone(),
                rng: stream_rng(master_seed, sample_id, d),
            })
            .collect();
        Self {
            model,
            sample_id,
            dims,
            groups: Vec::new(),
            stats: SamplerStats::default(),
        }
    }

    pub fn model(&self) -> &Arc<GpModel> {
        &self.model
    }

    pub fn sample_id(&self) -> u64 {
        self.sample_id
    }

    pub fn stats(&self) -> SamplerStats {
        self.stats
    }

    /// Number of retained sampled row groups.
    pub fn groups(&self) -> usize {
        self.groups.len()
    }

    /// Conditioning rows per output dimension, base data included.
    pub fn conditioning_rows(&self) -> usize {
        self.dims.iter().map(|s| s.gp.rows()).max().unwrap_or(0)
    }

    /// Draws values and gradients at the points of a flat buffer and
    /// conditions this sample on them.
    pub fn draw_joint(&mut self, points: &[f64]) -> Result<JointSample> {
        self.draw(points, true, Eta::Random)
    }

    /// Value-only variant of [`draw_joint`](Self::draw_joint).
    pub fn draw_values(&mut self, points: &[f64]) -> Result<JointSample> {
        self.draw(points, false, Eta::Random)
    }

    /// Draw driven by given standard-normal vectors (one per dimension),
    /// without truncation.
    pub(crate) fn draw_fixed(&mut self, points: &[f64], with_grad: bool, eta: &[Vec<f64>]) -> Result<JointSample> {
        self.draw(points, with_grad, Eta::Fixed(eta))
    }

    fn draw(&mut self, points: &[f64], with_grad: bool, eta: Eta<'_>) -> Result<JointSample> {
        let nz = self.model.input_dim;
        if points.is_empty() || points.len() % nz != 0 {
            return Err(Error::InvalidArgument(format!(
                "query buffer of length {} does not hold {nz}-dimensional points",
                points.len()
            )));
        }
        let n_points = points.len() / nz;
        let model = &self.model;
        let results: Vec<Result<DimDraw>> = self
            .dims
            .par_iter_mut()
            .enumerate()
            .map(|(d, state)| {
                let fixed = match &eta {
                    Eta::Random => None,
                    Eta::Fixed(e) => Some(e[d].as_slice()),
                };
                draw_dim(state, model, d, points, with_grad, fixed)
            })
            .collect();
        let mut group = Group {
            points: points.to_vec(),
            with_grad,
            targets: Vec::with_capacity(self.dims.len()),
            noise: Vec::with_capacity(self.dims.len()),
        };
        let mut sample = JointSample {
            input_dim: nz,
            n_points,
            values: Vec::with_capacity(self.dims.len()),
            gradients: Vec::with_capacity(self.dims.len()),
            clamped: false,
        };
        let stride = if with_grad { nz + 1 } else { 1 };
        for r in results {
            let r = r?;
            self.stats.draws += 1;
            self.stats.attempts += r.attempts;
            if r.clamped {
                self.stats.clamped += 1;
                sample.clamped = true;
            }
            sample.values.push((0..n_points).map(|i| r.targets[i * stride]).collect());
            sample.gradients.push(if with_grad {
                (0..n_points)
                    .flat_map(|i| r.targets[i * stride + 1..(i + 1) * stride].iter().copied())
                    .collect()
            } else {
                Vec::new()
            });
            group.targets.push(r.targets);
            group.noise.push(r.noise);
        }
        self.groups.push(group);
        Ok(sample)
    }

    /// Keeps the base data and the most recent `keep` groups of sampled
    /// rows, dropping everything older.
    pub fn truncate_memory(&mut self, keep: usize) -> Result<()> {
        if keep >= self.groups.len() {
            return Ok(());
        }
        let drop = self.groups.len() - keep;
        self.groups.drain(..drop);
        for (d, state) in self.dims.iter_mut().enumerate() {
            let mut gp = self.model.base[d].clone();
            for g in &self.groups {
                gp.condition_on(&g.points, g.with_grad, &g.targets[d], &g.noise[d])?;
            }
            state.gp = gp;
        }
        Ok(())
    }
}

fn draw_dim(
    state: &mut DimState,
    model: &GpModel,
    d: usize,
    points: &[f64],
    with_grad: bool,
    fixed: Option<&[f64]>,
) -> Result<DimDraw> {
    let cfg = &model.config;
    let nz = model.input_dim;
    let stride = if with_grad { nz + 1 } else { 1 };
    let cond = state.gp.conditional(points, with_grad)?;
    let m = cond.mean.len();
    let noise = vec![cfg.sample_noise_var; m];
    let block = state.gp.block_factor(&cond, &noise)?;
    let bounds = if cfg.truncate && fixed.is_none() {
        Some(model.bounds(d, points)?)
    } else {
        None
    };
    let mut eta = DVector::zeros(m);
    let mut attempts = 0u64;
    let mut clamped = false;
    let g = loop {
        match fixed {
            Some(e) => {
                if e.len() != m {
                    return Err(Error::InvalidArgument(format!("expected {m} normal variates, got {}", e.len())));
                }
                eta.copy_from_slice(e);
            }
            None => {
                for v in eta.iter_mut() {
                    *v = StandardNormal.sample(&mut state.rng);
                }
            }
        }
        attempts += 1;
        let mut g = &cond.mean + &block.factor * &eta;
        let Some((lo, hi)) = &bounds else { break g };
        let inside = (0..lo.len()).all(|i| {
            let v = g[i * stride];
            v >= lo[i] && v <= hi[i]
        });
        if inside {
            break g;
        }
        if attempts > cfg.max_redraws as u64 {
            for i in 0..lo.len() {
                g[i * stride] = g[i * stride].clamp(lo[i], hi[i]);
            }
            clamped = true;
            log::warn!("redraw budget of {} exhausted in output dimension {d}; value clamped", cfg.max_redraws);
            break g;
        }
    };
    let targets: Vec<f64> = g.iter().copied().collect();
    state.gp.commit(points, with_grad, &cond, &block, &targets)?;
    Ok(DimDraw {
        targets,
        noise: block.noise,
        attempts,
        clamped,
    })
}

/// Moments of sequentially drawn vectors compared with the joint posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    /// Largest `|empirical mean - mu| / sqrt(Sigma_ii / M)`.
    pub max_mean_z: f64,
    /// `||C_emp - Sigma||_F / ||Sigma||_F`.
    pub cov_rel_error: f64,
    /// Same relative error for the exact covariance implied by the
    /// sequential construction, with no Monte-Carlo noise.
    pub structural_rel_error: f64,
    pub mean: Vec<f64>,
    pub empirical_mean: Vec<f64>,
}

/// Draws `m` full vectors at `points` block by block (block sizes in
/// `partition`) from output dimension 0 of `model` and compares them with
/// one joint draw distribution.
pub fn sequential_equivalence_check(
    model: &Arc<GpModel>,
    points: &[Vec<f64>],
    partition: &[usize],
    m: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    let nz = model.input_dim();
    let flat = crate::gp::flatten(points, nz)?;
    let n = points.len();
    if partition.iter().sum::<usize>() != n || partition.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "partition {partition:?} does not cover {n} points"
        )));
    }
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two draws".into()));
    }
    let joint = model.base(0).conditional(&flat, false)?;
    let mut sigma = joint.cov.clone();
    for i in 0..n {
        sigma[(i, i)] += model.config().sample_noise_var;
    }
    let sigma_norm = sigma.norm().max(f64::MIN_POSITIVE);

    let run = |dyns: &mut SampledDynamics, eta: Option<&[f64]>| -> Result<Vec<f64>> {
        let mut full = Vec::with_capacity(n);
        let mut start = 0;
        for &len in partition {
            let block = &flat[start * nz..(start + len) * nz];
            let s = match eta {
                Some(e) => {
                    let mut per_dim = vec![Vec::new(); model.output_dim()];
                    for (d, v) in per_dim.iter_mut().enumerate() {
                        *v = if d == 0 { e[start..start + len].to_vec() } else { vec![0.0; len] };
                    }
                    dyns.draw_fixed(block, false, &per_dim)?
                }
                None => dyns.draw_values(block)?,
            };
            full.extend_from_slice(&s.values[0]);
            start += len;
        }
        Ok(full)
    };

    // exact covariance of the sequential map eta -> G, column by column
    let mut base_run = SampledDynamics::new(model.clone(), seed, 0);
    let offset = DVector::from_vec(run(&mut base_run, Some(&vec![0.0; n]))?);
    let mut a = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        let mut s = SampledDynamics::new(model.clone(), seed, 0);
        let col = DVector::from_vec(run(&mut s, Some(&e))?) - &offset;
        a.set_column(k, &col);
    }
    let structural = (&a * a.transpose() - &sigma).norm() / sigma_norm;

    let draws: Vec<Vec<f64>> = (0..m as u64)
        .into_par_iter()
        .map(|k| run(&mut SampledDynamics::new(model.clone(), seed, k), None))
        .collect::<Result<_>>()?;
    let mut mean = DVector::zeros(n);
    for v in &draws {
        mean += DVector::from_column_slice(v);
    }
    mean /= m as f64;
    let mut cov = DMatrix::zeros(n, n);
    for v in &draws {
        let c = DVector::from_column_slice(v) - &mean;
        cov += &c * c.transpose();
    }
    cov /= (m - 1) as f64;
    let max_mean_z = (0..n)
        .map(|i| (mean[i] - joint.mean[i]).abs() / (sigma[(i, i)].max(f64::MIN_POSITIVE) / m as f64).sqrt())
        .fold(0.0, f64::max);
    Ok(EquivalenceReport {
        max_mean_z,
        cov_rel_error: (cov - &sigma).norm() / sigma_norm,
        structural_rel_error: structural,
        mean: joint.mean.iter().copied().collect(),
        empirical_mean: mean.iter().copied().collect(),
    })
}
