mod common;

use clar::model::{datafit_clar, datafit_gradient, objective_clar, residual_gram};
use clar::solvers::{glasso, update_s_clar, update_sigma_mle};
use clar::spectral::{
    cl, l1_ball_threshold, nuclear_norm, proj_schatten_1_ball, proj_schatten_2_ball, proj_schatten_inf_ball,
    smoothed_schatten1, smoothed_schatten1_grad, smoothed_schatten2, smoothed_schatten_inf, spcl,
};
use clar::{CoStdMatrix, RepeatedObservations};
use common::*;
use nalgebra::DMatrix;

fn bisect_threshold(values: &[f64]) -> f64 {
    let excess = |nu: f64| values.iter().map(|v| (v - nu).max(0.0)).sum::<f64>() - 1.0;
    if excess(0.0) <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, values.iter().cloned().fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn l1_threshold_matches_bisection() {
    assert!((l1_ball_threshold(&[0.9, 0.8, 0.3]) - bisect_threshold(&[0.9, 0.8, 0.3])).abs() < 1e-14);
    assert!((l1_ball_threshold(&[0.9, 0.8, 0.3]) - 0.35).abs() < 1e-14);
    let mut rng = rng(4);
    for _ in 0..50 {
        let values: Vec<f64> = gaussian(1, 7, &mut rng).iter().map(|v| v.abs()).collect();
        assert!((l1_ball_threshold(&values) - bisect_threshold(&values)).abs() < 1e-12);
    }
}

/// Minimizes `<S^-1, E> + Tr S` over `S >= sigma_min I`.
fn s_oracle(e: &DMatrix<f64>, sigma_min: f64) -> DMatrix<f64> {
    let n = e.nrows();
    let f = |s: &DMatrix<f64>| match s.clone().try_inverse() {
        Some(inv) => inv.dot(e) + s.trace(),
        None => f64::INFINITY,
    };
    let grad = |s: &DMatrix<f64>| {
        let inv = s.clone().try_inverse().unwrap();
        DMatrix::identity(n, n) - &inv * e * &inv
    };
    let proj = |s: &DMatrix<f64>| eig_map(s, |v| v.max(sigma_min));
    projected_gradient(DMatrix::identity(n, n), f, grad, proj, 200_000)
}

#[test]
fn s_update_matches_projected_gradient() {
    for seed in 0..10 {
        let n = 2 + seed as usize % 5;
        let (x, obs, beta) = instance(n, 4, 3, 2, 100 + seed);
        let beta = beta * 0.7;
        let gram = residual_gram(&obs, &x, &beta).unwrap();
        let e = &gram / (obs.r() * obs.q()) as f64;
        let sigma_min = 0.6 * eig_map(&e, |v| v.max(0.0).sqrt()).trace() / n as f64;
        let closed = update_s_clar(&obs, &x, &beta, sigma_min).unwrap();
        let oracle = s_oracle(&e, sigma_min);
        let diff = (closed.matrix() - &oracle).norm();
        assert!(diff < 1e-6, "seed {seed}: {diff:e}");
    }
}

#[test]
fn clipped_covariance_matches_likelihood_oracle() {
    for seed in 0..10 {
        let mut rng = rng(200 + seed);
        let e = random_psd(4, 3, &mut rng);
        let floor = 0.3 * e.trace() / 4.0;
        let f = |theta: &DMatrix<f64>| {
            let chol = theta.clone().cholesky();
            match chol {
                Some(c) => theta.dot(&e) - 2.0 * c.l().diagonal().map(|v| v.ln()).sum(),
                None => f64::INFINITY,
            }
        };
        let grad = |theta: &DMatrix<f64>| &e - theta.clone().try_inverse().unwrap();
        let proj = |theta: &DMatrix<f64>| eig_map(theta, |v| v.clamp(1e-9, 1.0 / floor));
        let theta = projected_gradient(DMatrix::identity(4, 4), f, grad, proj, 200_000);
        let oracle = theta.try_inverse().unwrap();
        let closed = cl(&e, floor).unwrap();
        assert!((closed - oracle).norm() < 1e-6, "seed {seed}");
    }
}

#[test]
fn sigma_update_uses_clipped_empirical_covariance() {
    let (x, obs, beta) = instance(4, 5, 3, 3, 7);
    let gram = residual_gram(&obs, &x, &beta).unwrap();
    let expected = cl(&(gram / 9.0), 0.05).unwrap();
    let sigma = update_sigma_mle(&obs, &x, &beta, 0.05).unwrap();
    assert!((sigma.matrix() - expected).amax() < 1e-12);
}

#[test]
fn glasso_matches_proximal_gradient() {
    let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.2, -0.3, 0.2, -0.3, 0.8]);
    let mu = 0.1;
    let smooth = |t: &DMatrix<f64>| match t.clone().cholesky() {
        Some(c) => t.dot(&s) - 2.0 * c.l().diagonal().map(|v| v.ln()).sum(),
        None => f64::INFINITY,
    };
    let mut theta = DMatrix::from_diagonal(&s.diagonal().map(|v| 1.0 / v));
    let mut step: f64 = 1.0;
    for _ in 0..100_000 {
        let grad = &s - theta.clone().try_inverse().unwrap();
        let f0 = smooth(&theta);
        step *= 2.0;
        let next = loop {
            let mut cand = &theta - &grad * step;
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        let v: f64 = cand[(i, j)];
                        cand[(i, j)] = v.signum() * (v.abs() - mu * step).max(0.0);
                    }
                }
            }
            let d = &cand - &theta;
            if smooth(&cand) <= f0 + grad.dot(&d) + d.norm_squared() / (2.0 * step) {
                break cand;
            }
            step *= 0.5;
        };
        let change = (&next - &theta).amax();
        theta = next;
        if change < 1e-14 {
            break;
        }
    }
    let estimate = glasso(&s, mu).unwrap();
    assert!((estimate - theta).amax() < 1e-6);
}

#[test]
fn smoothed_nuclear_matches_variational_oracle() {
    let mut rng = rng(31);
    for _ in 0..5 {
        let z = gaussian(3, 4, &mut rng);
        let sigma_min = 0.8;
        let e = &z * z.transpose();
        let s = s_oracle(&e, sigma_min);
        let oracle = 0.5 * (s.clone().try_inverse().unwrap().dot(&e) + s.trace());
        assert!((smoothed_schatten1(&z, sigma_min).unwrap() - oracle).abs() < 1e-8);
    }
}

#[test]
fn smoothed_nuclear_gradient_matches_finite_differences() {
    let mut rng = rng(32);
    let z = gaussian(4, 3, &mut rng);
    let sigma_min = 0.9;
    let grad = smoothed_schatten1_grad(&z, sigma_min).unwrap();
    let h = 1e-6;
    for i in 0..4 {
        for j in 0..3 {
            let mut plus = z.clone();
            plus[(i, j)] += h;
            let mut minus = z.clone();
            minus[(i, j)] -= h;
            let fd = (smoothed_schatten1(&plus, sigma_min).unwrap() - smoothed_schatten1(&minus, sigma_min).unwrap())
                / (2.0 * h);
            assert!((fd - grad[(i, j)]).abs() < 1e-6 * grad.amax().max(1.0));
        }
    }
}

#[test]
fn smoothed_frobenius_matches_scalar_minimization() {
    let mut rng = rng(33);
    for scale in [0.1, 1.0, 5.0] {
        let z = gaussian(3, 2, &mut rng) * scale;
        let sigma_min = 1.0;
        let norm2 = z.norm_squared();
        // golden section for min_{s >= sigma_min} norm2 / (2s) + s / 2
        let g = |s: f64| norm2 / (2.0 * s) + s / 2.0;
        let (mut a, mut b) = (sigma_min, sigma_min + 10.0 * (1.0 + norm2.sqrt()));
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..300 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if g(c) < g(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let oracle = g(0.5 * (a + b));
        assert!((smoothed_schatten2(&z, sigma_min).unwrap() - oracle).abs() < 1e-9);
    }
}

#[test]
fn smoothed_spectral_norm_matches_dual_formula() {
    let mut rng = rng(34);
    for scale in [0.05, 1.0, 4.0] {
        let z = gaussian(4, 3, &mut rng) * scale;
        let sigma_min = 0.5;
        let sv = z.clone().svd(false, false).singular_values;
        let scaled: Vec<f64> = sv.iter().map(|g| g / sigma_min).collect();
        let nu = bisect_threshold(&scaled);
        let pi: Vec<f64> = scaled.iter().map(|t| (t - nu).max(0.0)).collect();
        let inner: f64 = pi.iter().zip(sv.iter()).map(|(a, g)| a * g).sum();
        let oracle = inner - 0.5 * sigma_min * pi.iter().map(|a| a * a).sum::<f64>() + 0.5 * sigma_min;
        let value = smoothed_schatten_inf(&z, sigma_min).unwrap();
        assert!((value - oracle).abs() < 1e-9, "{value} vs {oracle}");
        assert!(value >= sv.max() - 1e-12 && value <= sv.max() + 0.5 * sigma_min + 1e-12);
    }
}

#[test]
fn projections_satisfy_optimality_conditions() {
    let mut rng = rng(35);
    for k in 0..30 {
        let z = gaussian(3 + k % 3, 2 + k % 4, &mut rng) * (0.2 + k as f64 * 0.1);
        // Optimality of P for the ball B: sup_{W in B} <Z - P, W> <= <Z - P, P>.
        let p = proj_schatten_inf_ball(&z).unwrap();
        let d = &z - &p;
        assert!(norms(&p).0 <= 1.0 + 1e-10);
        assert!(norms(&d).1 <= d.dot(&p) + 1e-6);

        let p = proj_schatten_2_ball(&z).unwrap();
        let d = &z - &p;
        assert!(p.norm() <= 1.0 + 1e-12);
        assert!(d.norm() <= d.dot(&p) + 1e-6);

        let (p, _) = proj_schatten_1_ball(&z).unwrap();
        let d = &z - &p;
        assert!(norms(&p).1 <= 1.0 + 1e-10);
        assert!(norms(&d).0 <= d.dot(&p) + 1e-6);
    }
}

#[test]
fn nuclear_projection_matches_bisection_threshold() {
    let z = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.9, 0.8, 0.3]));
    let (p, nu) = proj_schatten_1_ball(&z).unwrap();
    assert!((nu - bisect_threshold(&[0.9, 0.8, 0.3])).abs() < 1e-12);
    assert!((nuclear_norm(&p).unwrap() - 1.0).abs() < 1e-12);
    assert!((p[(0, 0)] - 0.55).abs() < 1e-12 && (p[(1, 1)] - 0.45).abs() < 1e-12 && p[(2, 2)].abs() < 1e-12);
}

#[test]
fn datafit_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let (x, obs, beta) = instance(6, 5, 3, 3, 400 + seed);
        let mut rng = rng(500 + seed);
        let s = CoStdMatrix::from_matrix(&(random_psd(6, 8, &mut rng) + DMatrix::identity(6, 6) * 0.2)).unwrap();
        let b = beta + gaussian(5, 3, &mut rng) * 0.3;
        let grad = datafit_gradient(&obs, &x, &b, &s).unwrap();
        let h = 1e-5;
        let mut fd = DMatrix::zeros(5, 3);
        for i in 0..5 {
            for j in 0..3 {
                let mut plus = b.clone();
                plus[(i, j)] += h;
                let mut minus = b.clone();
                minus[(i, j)] -= h;
                fd[(i, j)] = (datafit_clar(&obs, &x, &plus, &s).unwrap() - datafit_clar(&obs, &x, &minus, &s).unwrap())
                    / (2.0 * h);
            }
        }
        let rel = (&fd - &grad).norm() / grad.norm();
        assert!(rel < 1e-5, "seed {seed}: {rel:e}");
    }
}

#[test]
fn objective_is_jointly_midpoint_convex() {
    let (x, obs, _) = instance(5, 6, 3, 4, 77);
    let mut rng = rng(78);
    let sigma_min = 0.1;
    let lambda = 0.05;
    for _ in 0..100 {
        let b1 = gaussian(6, 3, &mut rng);
        let b2 = gaussian(6, 3, &mut rng);
        let s1 = random_psd(5, 6, &mut rng) + DMatrix::identity(5, 5) * sigma_min;
        let s2 = random_psd(5, 6, &mut rng) + DMatrix::identity(5, 5) * sigma_min;
        let f = |b: &DMatrix<f64>, s: &DMatrix<f64>| {
            objective_clar(&obs, &x, b, &CoStdMatrix::from_matrix(s).unwrap(), lambda).unwrap()
        };
        let mid = f(&((&b1 + &b2) * 0.5), &((&s1 + &s2) * 0.5));
        let avg = 0.5 * (f(&b1, &s1) + f(&b2, &s2));
        assert!(mid <= avg + 1e-10 * avg.abs().max(1.0));
    }
}

#[test]
fn residual_gram_matches_stacked_residuals() {
    for seed in 0..20 {
        let n = 1 + seed as usize % 10;
        let q = 1 + (seed as usize * 3) % 10;
        let r = 1 + (seed as usize * 7) % 10;
        let (x, obs, beta) = instance(n, 4, q, r, 600 + seed);
        let xb = x.matrix() * &beta;
        let mut explicit = DMatrix::zeros(n, n);
        for y in obs.repetitions() {
            let res = y - &xb;
            explicit += &res * res.transpose();
        }
        let gram = residual_gram(&obs, &x, &beta).unwrap();
        assert!((&gram - &explicit).norm() <= 1e-8 * explicit.norm());
    }
}

#[test]
fn spcl_squares_to_clipped_covariance() {
    let mut rng = rng(90);
    let sigma = random_psd(5, 3, &mut rng);
    let s = spcl(&sigma, 0.2).unwrap();
    let squared = s.matrix() * s.matrix();
    assert!((squared - cl(&sigma, 0.04).unwrap()).amax() < 1e-12);
    let single = RepeatedObservations::new(vec![gaussian(5, 2, &mut rng)]).unwrap();
    assert_eq!(single.r(), 1);
}
