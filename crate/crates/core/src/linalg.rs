//! Small dense linear-algebra helpers shared by the GP and QP code.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// First jitter tried after a plain factorization fails, relative to trace/n.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// Cholesky factor together with the diagonal shift that made it succeed.
#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub factor: DMatrix<f64>,
    pub jitter: f64,
}

/// Lower Cholesky factor of a symmetric matrix.
///
/// A plain factorization is tried first. On failure a diagonal jitter of
/// `JITTER_START * trace / n` is added and multiplied by ten until it
/// exceeds `JITTER_MAX * trace / n`.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<JitteredCholesky> {
    cholesky_jittered_scaled(m, 0.0)
}

/// As [`cholesky_jittered`], with the jitter scale taken as
/// `max(trace / n, scale_floor)`. Schur complements of nearly conditioned
/// blocks have tiny traces but roundoff on the order of the prior scale.
pub fn cholesky_jittered_scaled(m: &DMatrix<f64>, scale_floor: f64) -> Result<JitteredCholesky> {
    let n = m.nrows();
    if n == 0 {
        return Ok(JitteredCholesky {
            factor: DMatrix::zeros(0, 0),
            jitter: 0.0,
        });
    }
    if let Some(ch) = Cholesky::<f64, Dyn>::new(m.clone()) {
        return Ok(JitteredCholesky {
            factor: ch.unpack(),
            jitter: 0.0,
        });
    }
    let mean_diag = (m.trace() / n as f64).abs().max(scale_floor).max(f64::MIN_POSITIVE);
    let mut rel = JITTER_START;
    let mut jitter = rel * mean_diag;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        jitter = rel * mean_diag;
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::<f64, Dyn>::new(shifted) {
            log::debug!("cholesky needed jitter {jitter:.3e} on {n}x{n} matrix");
            return Ok(JitteredCholesky {
                factor: ch.unpack(),
                jitter,
            });
        }
        rel *= 10.0;
    }
    Err(Error::Factorization {
        dim: n,
        mean_diag,
        jitter,
    })
}

/// Lower-triangular factor stored row by row, so that it can grow by
/// appending rows without copying.
#[derive(Clone, Debug, Default)]
pub struct PackedCholesky {
    n: usize,
    data: Vec<f64>,
}

impl PackedCholesky {
    pub fn from_dense(l: &DMatrix<f64>) -> Self {
        let n = l.nrows();
        let mut data = Vec::with_capacity(n * (n + 1) / 2);
        for r in 0..n {
            for c in 0..=r {
                data.push(l[(r, c)]);
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        let start = r * (r + 1) / 2;
        &self.data[start..start + r + 1]
    }

    /// Solves `L X = B` in place. `b` holds `n x m` values row-major.
    pub fn forward_solve_rows(&self, b: &mut [f64], m: usize) {
        debug_assert_eq!(b.len(), self.n * m);
        for r in 0..self.n {
            let (done, rest) = b.split_at_mut(r * m);
            let target = &mut rest[..m];
            let lr = self.row(r);
            for (s, &c) in lr[..r].iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let src = &done[s * m..(s + 1) * m];
                for (t, &v) in target.iter_mut().zip(src) {
                    *t -= c * v;
                }
            }
            let d = lr[r];
            for t in target.iter_mut() {
                *t /= d;
            }
        }
    }

    /// Solves `L x = b` for a single right-hand side.
    pub fn forward_solve(&self, b: &mut [f64]) {
        self.forward_solve_rows(b, 1);
    }

    /// Grows the factor of `K` to the factor of `[[K, K12], [K21, K22]]`.
    ///
    /// `cross` is `L^{-1} K12` (n x m, row-major) and `block` the lower
    /// factor of the Schur complement `K22 - cross^T cross`.
    pub fn append(&mut self, cross: &[f64], block: &DMatrix<f64>) {
        let m = block.nrows();
        debug_assert_eq!(cross.len(), self.n * m);
        self.data.reserve(m * self.n + m * (m + 1) / 2);
        for i in 0..m {
            for s in 0..self.n {
                self.data.push(cross[s * m + i]);
            }
            for j in 0..=i {
                self.data.push(block[(i, j)]);
            }
        }
        self.n += m;
    }

    pub fn log_diag_sum(&self) -> f64 {
        (0..self.n).map(|r| self.row(r)[r].ln()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, &v) in self.row(r).iter().enumerate() {
                l[(r, c)] = v;
            }
        }
        l
    }
}

/// Smallest eigenvalue of a symmetric matrix (exact for small sizes,
/// Gershgorin lower bound otherwise).
pub fn min_eigenvalue_estimate(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    if n <= 300 {
        let sym = (m + m.transpose()) * 0.5;
        return sym.symmetric_eigenvalues().min();
    }
    (0..n)
        .map(|i| {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
            m[(i, i)] - off
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        &a * a.transpose() + DMatrix::identity(n, n)
    }

    #[test]
    fn grown_factor_matches_full_factor() {
        let k = spd(7);
        let full = cholesky_jittered(&k).unwrap().factor;
        let head = k.view((0, 0), (4, 4)).into_owned();
        let mut packed = PackedCholesky::from_dense(&cholesky_jittered(&head).unwrap().factor);
        let k12 = k.view((0, 4), (4, 3)).into_owned();
        let mut cross: Vec<f64> = (0..4).flat_map(|r| (0..3).map(move |c| (r, c))).map(|(r, c)| k12[(r, c)]).collect();
        packed.forward_solve_rows(&mut cross, 3);
        let ct = DMatrix::from_row_slice(4, 3, &cross);
        let schur = k.view((4, 4), (3, 3)).into_owned() - ct.transpose() * &ct;
        let block = cholesky_jittered(&schur).unwrap().factor;
        packed.append(&cross, &block);
        assert!((packed.to_dense() - full).amax() < 1e-12);
    }

    #[test]
    fn singular_matrix_gets_jitter() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let k = &v * v.transpose();
        let ch = cholesky_jittered(&k).unwrap();
        assert!(ch.jitter > 0.0);
        assert!(ch.jitter <= JITTER_MAX * k.trace() / 3.0);
    }

    #[test]
    fn indefinite_matrix_fails_with_diagnostics() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match cholesky_jittered(&k) {
            Err(Error::Factorization { dim, .. }) => assert_eq!(dim, 2),
            other => panic!("expected factorization error, got {other:?}"),
        }
    }
}
