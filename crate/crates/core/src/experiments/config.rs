use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{bicycle_spec, generate_training_data, pendulum_spec, Benchmark, BicycleParams, PendulumParams, TrainingGridSpec};
use crate::error::{Error, Result};
use crate::gp::{fit_hyperparameters, FitOptions, GpDataset, KernelParams};
use crate::mpc::MpcConfig;
use crate::qp::QpSettings;
use crate::sampler::{GpModel, SamplerConfig};
use crate::sqp::{OcpDefinition, QuadraticCost};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Pendulum,
    Bicycle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    /// One lengthscale vector per output dimension.
    pub lengthscales: Vec<Vec<f64>>,
    pub output_scales: Vec<f64>,
    /// Kernel noise variance, used where an observation has none.
    pub noise_var: f64,
    /// Refine the hyperparameters by marginal likelihood, starting from the
    /// values above.
    #[serde(default)]
    pub fit: bool,
    #[serde(default)]
    pub fit_options: FitOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpConfig {
    pub horizon: usize,
    pub samples: usize,
    pub x0: Vec<f64>,
    /// Diagonal weights.
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    #[serde(default)]
    pub q_terminal: Option<Vec<f64>>,
    pub x_ref: Vec<f64>,
    pub u_ref: Vec<f64>,
    /// Constant input used for the initial rollout; defaults to `u_ref`.
    #[serde(default)]
    pub u_guess: Option<Vec<f64>>,
    #[serde(default = "default_soft_weight")]
    pub soft_weight: f64,
    #[serde(default)]
    pub hard_state_constraints: bool,
    #[serde(default)]
    pub qp: QpSettings,
}

fn default_soft_weight() -> f64 {
    1e4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagateConfig {
    pub monte_carlo: usize,
    pub sqp_iterations: usize,
    /// State coordinates shown and compared in the plane.
    pub plot_dims: [usize; 2],
}

impl Default for PropagateConfig {
    fn default() -> Self {
        Self {
            monte_carlo: 1000,
            sqp_iterations: 20,
            plot_dims: [0, 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub samples: Vec<usize>,
    pub iterations: Vec<usize>,
    pub repeats: usize,
    /// Closed-loop steps per repeat.
    pub steps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            samples: vec![5, 10, 20],
            iterations: vec![1, 2, 3],
            repeats: 3,
            steps: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub pendulum: PendulumParams,
    #[serde(default)]
    pub bicycle: BicycleParams,
    pub gp: GpConfig,
    pub grid: TrainingGridSpec,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub ocp: OcpConfig,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub propagate: PropagateConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Named random streams derived from the single experiment seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Sampling = 2,
    MonteCarlo = 3,
    Trials = 4,
}

pub fn sub_seed(seed: u64, stream: Stream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            e => e,
        };
        self.sampler.validate().map_err(cfg_err)?;
        self.mpc.validate()?;
        let (nx, nu, nz, ng) = match self.system {
            SystemKind::Pendulum => (2, 1, 3, 2),
            SystemKind::Bicycle => (4, 2, 3, 3),
        };
        self.grid.validate(nz).map_err(cfg_err)?;
        self.gp.fit_options.validate().map_err(cfg_err)?;
        let gp = &self.gp;
        if gp.lengthscales.len() != ng || gp.output_scales.len() != ng {
            return Err(Error::Config(format!("gp needs {ng} lengthscale vectors and output scales")));
        }
        for (ls, s) in gp.lengthscales.iter().zip(&gp.output_scales) {
            KernelParams::new(ls.clone(), *s, gp.noise_var).map_err(cfg_err)?;
            if ls.len() != nz {
                return Err(Error::Config(format!("each lengthscale vector needs {nz} entries")));
            }
        }
        let o = &self.ocp;
        let lens = [
            ("ocp.x0", o.x0.len(), nx),
            ("ocp.q", o.q.len(), nx),
            ("ocp.x_ref", o.x_ref.len(), nx),
            ("ocp.r", o.r.len(), nu),
            ("ocp.u_ref", o.u_ref.len(), nu),
            ("ocp.q_terminal", o.q_terminal.as_ref().map_or(nx, Vec::len), nx),
            ("ocp.u_guess", o.u_guess.as_ref().map_or(nu, Vec::len), nu),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(Error::Config(format!("{name} has length {got}, expected {want}")));
            }
        }
        if o.horizon == 0 || o.samples == 0 {
            return Err(Error::Config("ocp.horizon and ocp.samples must be at least 1".into()));
        }
        let weights = o.q.iter().chain(&o.r).chain(o.q_terminal.iter().flatten());
        if weights.clone().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("cost weights must be finite and non-negative".into()));
        }
        if !(o.soft_weight > 0.0) {
            return Err(Error::Config("ocp.soft_weight must be positive".into()));
        }
        if self.propagate.monte_carlo == 0 || self.propagate.sqp_iterations == 0 {
            return Err(Error::Config("propagate counts must be at least 1".into()));
        }
        if self.propagate.plot_dims.iter().any(|d| *d >= nx) {
            return Err(Error::Config("propagate.plot_dims out of range".into()));
        }
        let b = &self.bench;
        if b.samples.is_empty() || b.iterations.is_empty() || b.repeats == 0 || b.steps == 0 {
            return Err(Error::Config("bench lists and counts must be non-empty".into()));
        }
        if b.samples.contains(&0) || b.iterations.contains(&0) {
            return Err(Error::Config("bench entries must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything an experiment needs, built from a config.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub bench: Benchmark,
    pub data: Vec<GpDataset>,
    pub params: Vec<KernelParams>,
    pub model: Arc<GpModel>,
    pub ocp: OcpDefinition,
    pub x0: DVector<f64>,
    pub u_guess: Vec<DVector<f64>>,
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let bench = match config.system {
            SystemKind::Pendulum => pendulum_spec(&config.pendulum),
            SystemKind::Bicycle => bicycle_spec(&config.bicycle),
        }
        .map_err(|e| Error::Config(e.to_string()))?;
        let data = generate_training_data(&bench, &config.grid, sub_seed(config.seed, Stream::Data))?;
        let gp = &config.gp;
        let mut params = Vec::with_capacity(data.len());
        for (d, (ls, s)) in data.iter().zip(gp.lengthscales.iter().zip(&gp.output_scales)) {
            let init = KernelParams::new(ls.clone(), *s, gp.noise_var)?;
            params.push(if gp.fit {
                fit_hyperparameters(d, &init, &gp.fit_options)?
            } else {
                init
            });
        }
        let model = Arc::new(GpModel::new(&data, &params, config.sampler.clone())?);
        let o = &config.ocp;
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        let nx = bench.system.n_x;
        let cost = QuadraticCost {
            q: diag(&o.q),
            r: diag(&o.r),
            q_terminal: o.q_terminal.as_deref().map_or_else(|| DMatrix::zeros(nx, nx), diag),
            x_ref: DVector::from_column_slice(&o.x_ref),
            u_ref: DVector::from_column_slice(&o.u_ref),
        };
        let ocp = OcpDefinition {
            system: bench.system.clone(),
            horizon: o.horizon,
            samples: o.samples,
            cost,
            state_soft_weight: (!o.hard_state_constraints).then_some(o.soft_weight),
            qp: o.qp.clone(),
        };
        let guess = o.u_guess.as_deref().unwrap_or(&o.u_ref);
        let u_guess = vec![DVector::from_column_slice(guess); o.horizon];
        Ok(Self {
            x0: DVector::from_column_slice(&o.x0),
            config,
            bench,
            data,
            params,
            model,
            ocp,
            u_guess,
        })
    }

    pub fn sampling_seed(&self) -> u64 {
        sub_seed(self.config.seed, Stream::Sampling)
    }

    /// Copy with a different sample count.
    pub fn with_samples(&self, n: usize) -> Self {
        let mut e = self.clone();
        e.ocp.samples = n;
        e.config.ocp.samples = n;
        e
    }
}
