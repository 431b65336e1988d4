#![allow(dead_code)]

use clar::{DesignMatrix, RepeatedObservations};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `A A^T / m` for a Gaussian `n x m` matrix `A`: PSD, full rank when `m >= n`.
pub fn random_psd(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = gaussian(n, m, rng);
    &a * a.transpose() / m as f64
}

pub fn instance(
    n: usize,
    p: usize,
    q: usize,
    r: usize,
    seed: u64,
) -> (DesignMatrix, RepeatedObservations, DMatrix<f64>) {
    let mut rng = rng(seed);
    let x = gaussian(n, p, &mut rng);
    let mut beta = DMatrix::zeros(p, q);
    for j in 0..p.min(3) {
        for k in 0..q {
            beta[(j * 2 % p, k)] = StandardNormal.sample(&mut rng);
        }
    }
    let signal = &x * &beta;
    let reps = (0..r).map(|_| &signal + gaussian(n, q, &mut rng) * 0.5).collect();
    (DesignMatrix::new(x).unwrap(), RepeatedObservations::new(reps).unwrap(), beta)
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn eig_map(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Projected gradient descent with Armijo backtracking over symmetric matrices.
pub fn projected_gradient(
    start: DMatrix<f64>,
    f: impl Fn(&DMatrix<f64>) -> f64,
    grad: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    proj: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    iters: usize,
) -> DMatrix<f64> {
    let mut x = proj(&start);
    let mut step = 1.0;
    for _ in 0..iters {
        let g = grad(&x);
        let fx = f(&x);
        step *= 2.0;
        loop {
            let cand = proj(&(&x - &g * step));
            let fc = f(&cand);
            let d = &cand - &x;
            if fc.is_finite() && fc <= fx + g.dot(&d) + d.norm_squared() / (2.0 * step) {
                let done = d.norm() < 1e-15 * (1.0 + x.norm());
                x = cand;
                if done {
                    return x;
                }
                break;
            }
            step *= 0.5;
            if step < 1e-30 {
                return x;
            }
        }
    }
    x
}

/// Largest singular value, nuclear norm and Frobenius norm from nalgebra's SVD.
pub fn norms(z: &DMatrix<f64>) -> (f64, f64, f64) {
    let sv = z.clone().svd(false, false).singular_values;
    (sv.max(), sv.sum(), z.norm())
}
