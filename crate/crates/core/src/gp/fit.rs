//! Marginal-likelihood fitting of kernel hyperparameters.

use super::dataset::GpDataset;
use super::kernel::KernelParams;
use super::posterior::FactoredGp;
use crate::error::{Error, Result};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub sweeps: usize,
    /// Initial step in log space.
    pub step: f64,
    pub fit_noise: bool,
    pub lengthscale_bounds: [f64; 2],
    pub output_scale_bounds: [f64; 2],
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            sweeps: 40,
            step: 0.5,
            fit_noise: false,
            lengthscale_bounds: [1e-3, 1e3],
            output_scale_bounds: [1e-3, 1e3],
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        for [lo, hi] in [self.lengthscale_bounds, self.output_scale_bounds] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::InvalidArgument(format!("invalid fit bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn log_bounds(&self, i: usize, nz: usize) -> (f64, f64) {
        let [lo, hi] = if i < nz { self.lengthscale_bounds } else { self.output_scale_bounds };
        (lo.ln(), hi.ln())
    }
}

fn lml(data: &GpDataset, logs: &[f64], noise_var: f64, fit_noise: bool) -> f64 {
    let nz = data.input_dim();
    let nv = if fit_noise { logs[nz + 1].exp() } else { noise_var };
    let Ok(p) = KernelParams::new(logs[..nz].iter().map(|v| v.exp()).collect(), logs[nz].exp(), nv) else {
        return f64::NEG_INFINITY;
    };
    FactoredGp::from_dataset(data, &p).map_or(f64::NEG_INFINITY, |gp| gp.log_marginal_likelihood())
}

/// Maximizes the log marginal likelihood by pattern search in log space,
/// starting from `init`, with lengthscales and output scale kept within the
/// bounds of `opts`.
pub fn fit_hyperparameters(data: &GpDataset, init: &KernelParams, opts: &FitOptions) -> Result<KernelParams> {
    init.validate()?;
    opts.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot fit hyperparameters without data".into()));
    }
    let nz = data.input_dim();
    let mut x: Vec<f64> = init.lengthscales.iter().map(|l| l.ln()).collect();
    x.push(init.output_scale.ln());
    if opts.fit_noise {
        x.push(init.noise_var.max(1e-12).ln());
    }
    let n_bounded = nz + 1;
    for (i, v) in x[..n_bounded].iter_mut().enumerate() {
        let (lo, hi) = opts.log_bounds(i, nz);
        *v = v.clamp(lo, hi);
    }
    let mut best = lml(data, &x, init.noise_var, opts.fit_noise);
    let mut step = opts.step;
    for _ in 0..opts.sweeps {
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut cand = x.clone();
                cand[i] += dir * step;
                if i < n_bounded {
                    let (lo, hi) = opts.log_bounds(i, nz);
                    cand[i] = cand[i].clamp(lo, hi);
                }
                let v = lml(data, &cand, init.noise_var, opts.fit_noise);
                if v > best {
                    best = v;
                    x = cand;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-4 {
                break;
            }
        }
    }
    let nv = if opts.fit_noise { x[nz + 1].exp() } else { init.noise_var };
    KernelParams::new(x[..nz].iter().map(|v| v.exp()).collect(), x[nz].exp(), nv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_does_not_decrease_likelihood() {
        let mut d = GpDataset::new(1);
        for i in 0..15 {
            let x = -2.0 + 0.3 * i as f64;
            d.push_value(vec![x], (1.5 * x).sin()).unwrap();
        }
        let init = KernelParams::new(vec![3.0], 0.3, 1e-4).unwrap();
        let before = FactoredGp::from_dataset(&d, &init).unwrap().log_marginal_likelihood();
        let fitted = fit_hyperparameters(&d, &init, &FitOptions::default()).unwrap();
        let after = FactoredGp::from_dataset(&d, &fitted).unwrap().log_marginal_likelihood();
        assert!(after >= before);
        assert!(fitted.lengthscales[0] < 3.0);
    }
}
