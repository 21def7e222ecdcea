use gpmpc::gp::{
    confidence_bounds, posterior, se_kernel, se_kernel_derivative_block, ConfidenceParams, GpDataset, KernelParams,
    PosteriorQuery,
};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params3() -> KernelParams {
    KernelParams::new(vec![0.7, 1.3, 2.0], 1.4, 1e-6).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-3)
}

#[test]
fn derivative_blocks_match_central_differences() {
    let p = params3();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-4;
    let k = |a: &[f64], b: &[f64]| se_kernel(a, b, &p).unwrap();
    for _ in 0..100 {
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let blk = se_kernel_derivative_block(&a, &b, &p).unwrap();
        assert!(rel_err(blk[(0, 0)], k(&a, &b)) < 1e-12);
        for d in 0..3 {
            let shift = |v: &[f64], s: f64| {
                let mut w = v.to_vec();
                w[d] += s;
                w
            };
            let dka = (k(&shift(&a, h), &b) - k(&shift(&a, -h), &b)) / (2.0 * h);
            let dkb = (k(&a, &shift(&b, h)) - k(&a, &shift(&b, -h))) / (2.0 * h);
            assert!(rel_err(blk[(1 + d, 0)], dka) < 1e-5, "dk/da_{d}");
            assert!(rel_err(blk[(0, 1 + d)], dkb) < 1e-5, "dk/db_{d}");
            for e in 0..3 {
                let de = |v: &[f64], s: f64| {
                    let mut w = v.to_vec();
                    w[e] += s;
                    w
                };
                let mixed = (k(&shift(&a, h), &de(&b, h)) - k(&shift(&a, h), &de(&b, -h)) - k(&shift(&a, -h), &de(&b, h))
                    + k(&shift(&a, -h), &de(&b, -h)))
                    / (4.0 * h * h);
                assert!((blk[(1 + d, 1 + e)] - mixed).abs() < 1e-5 * mixed.abs().max(1.0), "d2k/da_{d}db_{e}");
            }
        }
    }
}

fn dataset(with_grad: bool) -> GpDataset {
    let f = |z: &[f64]| (z[0].sin() + 0.5 * z[1] * z[2], vec![z[0].cos(), 0.5 * z[2], 0.5 * z[1]]);
    let mut d = GpDataset::new(3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..12 {
        let z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (v, g) = f(&z);
        if with_grad {
            d.push_value_gradient(z, v, g).unwrap();
        } else {
            d.push_value(z, v).unwrap();
        }
    }
    d
}

#[test]
fn posterior_gradient_matches_differences_of_the_mean() {
    let p = params3();
    for data in [dataset(false), dataset(true)] {
        let z = vec![0.2, -0.3, 0.4];
        let post = posterior(&data, &PosteriorQuery::with_derivatives(vec![z.clone()]), &p).unwrap();
        let h = 1e-5;
        for d in 0..3 {
            let (mut a, mut b) = (z.clone(), z.clone());
            a[d] += h;
            b[d] -= h;
            let m = posterior(&data, &PosteriorQuery::values(vec![a, b]), &p).unwrap().mean;
            let fd = (m[0] - m[1]) / (2.0 * h);
            assert!((post.mean[1 + d] - fd).abs() < 1e-4 * fd.abs().max(1.0), "dim {d}: {} vs {fd}", post.mean[1 + d]);
        }
    }
}

#[test]
fn gradient_observations_shrink_uncertainty() {
    let p = params3();
    let z = vec![vec![0.1, 0.1, 0.1], vec![0.9, -0.8, 0.3]];
    let v0 = posterior(&dataset(false), &PosteriorQuery::values(z.clone()), &p).unwrap().covariance;
    let v1 = posterior(&dataset(true), &PosteriorQuery::values(z), &p).unwrap().covariance;
    for i in 0..2 {
        assert!(v1[(i, i)] <= v0[(i, i)] + 1e-12);
    }
}

#[test]
fn confidence_band_is_symmetric_about_the_mean() {
    let p = params3();
    let data = dataset(true);
    let z = vec![0.3, 0.3, -0.2];
    let conf = ConfidenceParams::new(2.0).unwrap();
    let (lo, hi) = confidence_bounds(&z, &data, &p, &conf).unwrap();
    let post = posterior(&data, &PosteriorQuery::values(vec![z]), &p).unwrap();
    let sd = post.covariance[(0, 0)].sqrt();
    assert!((0.5 * (lo + hi) - post.mean[0]).abs() < 1e-9);
    assert!(((hi - lo) - 4.0 * sd).abs() < 1e-9);
}

fn arb_points(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..=n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn posterior_covariance_is_psd(pts in arb_points(6), grad in any::<bool>()) {
        let q = if grad { PosteriorQuery::with_derivatives(pts) } else { PosteriorQuery::values(pts) };
        let c = posterior(&dataset(true), &q, &params3()).unwrap().covariance;
        prop_assert!((&c - c.transpose()).amax() < 1e-9);
        let eig = SymmetricEigen::new(c.clone()).eigenvalues;
        prop_assert!(eig.min() > -1e-8 * c.diagonal().amax().max(1.0));
    }

    #[test]
    fn more_data_never_increases_variance(extra in arb_points(4), z in prop::collection::vec(-2.0f64..2.0, 3)) {
        let p = params3();
        let base = dataset(false);
        let mut more = base.clone();
        for e in extra {
            more.push_value(e, 0.0).unwrap();
        }
        let v0 = posterior(&base, &PosteriorQuery::values(vec![z.clone()]), &p).unwrap().covariance[(0, 0)];
        let v1 = posterior(&more, &PosteriorQuery::values(vec![z]), &p).unwrap().covariance[(0, 0)];
        prop_assert!(v1 <= v0 + 1e-10);
    }

    #[test]
    fn kernel_is_symmetric_and_bounded(a in prop::collection::vec(-3.0f64..3.0, 3), b in prop::collection::vec(-3.0f64..3.0, 3)) {
        let p = params3();
        let kab = se_kernel(&a, &b, &p).unwrap();
        prop_assert_eq!(kab, se_kernel(&b, &a, &p).unwrap());
        prop_assert!(kab > 0.0 && kab <= p.signal_var() * (1.0 + 1e-15));
    }
}
