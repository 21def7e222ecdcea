//! GP regression on values and gradients of `sin(z0) * cos(z1)`; compares
//! the posterior gradient with central differences of the posterior mean.

use gpmpc::gp::{posterior, GpDataset, KernelParams, PosteriorQuery};

fn f(z: &[f64]) -> (f64, Vec<f64>) {
    let (a, b) = (z[0], z[1]);
    (a.sin() * b.cos(), vec![a.cos() * b.cos(), -a.sin() * b.sin()])
}

fn main() -> gpmpc::Result<()> {
    let params = KernelParams::new(vec![1.0, 1.2], 1.0, 1e-8)?;
    let mut grads = GpDataset::new(2);
    let mut values = GpDataset::new(2);
    for i in 0..4 {
        for j in 0..4 {
            let z = vec![-1.5 + i as f64, -1.5 + j as f64];
            let (v, g) = f(&z);
            grads.push_value_gradient(z.clone(), v, g)?;
            values.push_value(z, v)?;
        }
    }

    let z = vec![0.3, -0.4];
    let (truth, truth_grad) = f(&z);
    for (name, data) in [("values only", &values), ("values + gradients", &grads)] {
        let post = posterior(data, &PosteriorQuery::with_derivatives(vec![z.clone()]), &params)?;
        let h = 1e-5;
        let fd: Vec<f64> = (0..2)
            .map(|d| {
                let (mut a, mut b) = (z.clone(), z.clone());
                a[d] += h;
                b[d] -= h;
                let q = PosteriorQuery::values(vec![a, b]);
                let m = posterior(data, &q, &params).map(|p| p.mean).unwrap_or_default();
                (m[0] - m[1]) / (2.0 * h)
            })
            .collect();
        println!("{name}");
        println!("  mean {:.6} (true {truth:.6}), std {:.2e}", post.mean[0], post.covariance[(0, 0)].sqrt());
        println!("  gradient {:.6?} (true {truth_grad:.6?})", &post.mean.as_slice()[1..]);
        println!("  finite differences of the mean {fd:.6?}");
    }
    Ok(())
}
