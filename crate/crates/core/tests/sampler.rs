use std::sync::Arc;

use gpmpc::gp::{GpDataset, KernelParams};
use gpmpc::sampler::{GpModel, SampledDynamics, SamplerConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn model(truncate: bool) -> Arc<GpModel> {
    let mut a = GpDataset::new(2);
    let mut b = GpDataset::new(2);
    for x in [-1.0, 0.0, 1.0] {
        for y in [-1.0, 1.0] {
            a.push_value(vec![x, y], (x + 0.3 * y).sin()).unwrap();
            b.push_value_gradient(vec![x, y], x * y, vec![y, x]).unwrap();
        }
    }
    let pa = KernelParams::new(vec![0.9, 1.1], 1.0, 1e-4).unwrap();
    let pb = KernelParams::new(vec![1.2, 0.8], 0.7, 1e-4).unwrap();
    let cfg = SamplerConfig {
        truncate,
        ..SamplerConfig::default()
    };
    Arc::new(GpModel::new(&[a, b], &[pa, pb], cfg).unwrap())
}

#[test]
fn joint_value_and_gradient_draws_have_posterior_moments() {
    let m = model(false);
    let pts = [0.4, -0.2, 1.6, 0.5];
    let cond = m.base(1).conditional(&pts, true).unwrap();
    let k = cond.mean.len();
    let draws = 4000;
    let mut mean = DVector::zeros(k);
    let mut samples = Vec::with_capacity(draws);
    for id in 0..draws as u64 {
        let s = SampledDynamics::new(m.clone(), 17, id).draw_joint(&pts).unwrap();
        let mut v = Vec::with_capacity(k);
        for p in 0..2 {
            v.push(s.value(1, p));
            v.extend_from_slice(s.gradient(1, p));
        }
        let v = DVector::from_vec(v);
        mean += &v;
        samples.push(v);
    }
    mean /= draws as f64;
    let mut cov = DMatrix::zeros(k, k);
    for v in &samples {
        let c = v - &mean;
        cov += &c * c.transpose();
    }
    cov /= (draws - 1) as f64;
    for i in 0..k {
        let se = (cond.cov[(i, i)] / draws as f64).sqrt().max(1e-9);
        assert!((mean[i] - cond.mean[i]).abs() / se < 4.5, "component {i}");
    }
    let rel = (&cov - &cond.cov).norm() / cond.cov.norm();
    assert!(rel < 0.1, "covariance relative error {rel}");
}

#[test]
fn requerying_a_point_returns_the_drawn_value() {
    let m = model(true);
    let noise_std = m.config().sample_noise_var.sqrt();
    let mut s = SampledDynamics::new(m, 3, 7);
    let first = s.draw_joint(&[0.3, 0.3, 2.0, -0.5]).unwrap();
    let again = s.draw_values(&[2.0, -0.5, 0.3, 0.3]).unwrap();
    for d in 0..2 {
        assert!((first.value(d, 0) - again.value(d, 1)).abs() < 10.0 * noise_std);
        assert!((first.value(d, 1) - again.value(d, 0)).abs() < 10.0 * noise_std);
    }
}

#[test]
fn streams_are_reproducible_and_distinct() {
    let m = model(true);
    let pts = [0.1, 0.2, -0.7, 0.9];
    let a = SampledDynamics::new(m.clone(), 5, 2).draw_joint(&pts).unwrap();
    let b = SampledDynamics::new(m.clone(), 5, 2).draw_joint(&pts).unwrap();
    let c = SampledDynamics::new(m.clone(), 5, 3).draw_joint(&pts).unwrap();
    let d = SampledDynamics::new(m, 6, 2).draw_joint(&pts).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(a.gradients, b.gradients);
    assert_ne!(a.values, c.values);
    assert_ne!(a.values, d.values);
}

#[test]
fn batch_draws_do_not_depend_on_other_samples() {
    let m = model(true);
    let pts = [0.5, 0.5];
    let alone = SampledDynamics::new(m.clone(), 9, 4).draw_values(&pts).unwrap();
    let mut others: Vec<SampledDynamics> = (0..8).map(|i| SampledDynamics::new(m.clone(), 9, i)).collect();
    let in_batch: Vec<_> = others.iter_mut().map(|s| s.draw_values(&pts).unwrap()).collect();
    assert_eq!(in_batch[4].values, alone.values);
}

#[test]
fn memory_truncation_keeps_the_latest_groups() {
    let m = model(true);
    let base = m.base_rows();
    let mut s = SampledDynamics::new(m.clone(), 1, 0);
    for i in 0..5 {
        s.draw_joint(&[0.1 * i as f64, 0.2]).unwrap();
    }
    assert_eq!(s.groups(), 5);
    assert_eq!(s.conditioning_rows(), base + 5 * 3);
    s.truncate_memory(2).unwrap();
    assert_eq!(s.groups(), 2);
    assert_eq!(s.conditioning_rows(), base + 2 * 3);
    s.truncate_memory(4).unwrap();
    assert_eq!(s.groups(), 2);
    // the last group is still remembered
    let v = s.draw_values(&[0.4, 0.2]).unwrap();
    let fresh = SampledDynamics::new(m, 1, 0).draw_values(&[0.4, 0.2]).unwrap();
    assert_ne!(v.values, fresh.values);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncated_values_stay_in_the_confidence_band(
        seed in any::<u64>(),
        pts in prop::collection::vec(-2.5f64..2.5, 2..=8),
    ) {
        let m = model(true);
        let pts = &pts[..pts.len() / 2 * 2];
        let s = SampledDynamics::new(m.clone(), seed, 0).draw_values(pts).unwrap();
        for d in 0..2 {
            let (lo, hi) = m.bounds(d, pts).unwrap();
            for (i, v) in s.values[d].iter().enumerate() {
                prop_assert!(*v >= lo[i] - 1e-12 && *v <= hi[i] + 1e-12);
            }
        }
    }
}
