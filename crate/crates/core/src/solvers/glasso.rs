//! Graphical lasso by block coordinate descent on the covariance estimate.
//!
//! Minimizes `<S, Theta> - log det Theta + mu * sum_{i != j} |Theta_ij|` over
//! positive-definite `Theta`. Each pass updates one row/column of the working
//! covariance `W = Theta^-1` by solving a lasso subproblem with coordinate descent.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, ClarError, Result};
use crate::spectral::{sym_eig, symmetrize_in_place};

/// Smallest eigenvalue below which the empirical covariance is diagonally loaded.
pub const LOADING_THRESHOLD: f64 = 1e-8;
/// Relative loading `1e-6 * tr(S) / n` applied to ill-conditioned inputs.
pub const LOADING_FACTOR: f64 = 1e-6;
/// Sup-norm bound on the stationarity residual of an accepted solution.
pub const KKT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlassoOptions {
    pub max_iters: usize,
    pub inner_max_iters: usize,
    /// Relative change in `W` at which the outer loop stops.
    pub tol: f64,
    /// Minimal diagonal loading, used when the trace-based loading vanishes.
    pub loading_floor: f64,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        Self { max_iters: 1000, inner_max_iters: 1000, tol: 1e-12, loading_floor: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct GlassoResult {
    pub precision: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Diagonal loading added to the input, zero when none was needed.
    pub loading: f64,
}

/// Sparse precision estimate with default options.
pub fn glasso(emp_cov: &DMatrix<f64>, mu: f64) -> Result<DMatrix<f64>> {
    glasso_with(emp_cov, mu, &GlassoOptions::default()).map(|res| res.precision)
}

pub fn glasso_with(emp_cov: &DMatrix<f64>, mu: f64, opts: &GlassoOptions) -> Result<GlassoResult> {
    let n = emp_cov.nrows();
    if n == 0 || emp_cov.ncols() != n {
        return invalid("empirical covariance must be square and non-empty");
    }
    if !(mu.is_finite() && mu > 0.0) {
        return invalid(format!("glasso penalty must be positive, got {mu}"));
    }
    let mut s = emp_cov.clone();
    symmetrize_in_place(&mut s);
    let dec = sym_eig(&s)?;
    if dec.min_value() < -1e-8 * dec.max_value().abs().max(1.0) {
        return invalid("empirical covariance is not positive semidefinite");
    }
    let mut loading = 0.0;
    if dec.min_value() < LOADING_THRESHOLD {
        loading = (LOADING_FACTOR * s.trace() / n as f64).max(opts.loading_floor);
        if loading <= 0.0 {
            return invalid("cannot regularize a zero covariance without a loading floor");
        }
        for i in 0..n {
            s[(i, i)] += loading;
        }
    }
    if n == 1 {
        let precision = DMatrix::from_element(1, 1, 1.0 / s[(0, 0)]);
        return Ok(GlassoResult { precision, covariance: s, iterations: 0, kkt_residual: 0.0, loading });
    }

    let scale = s.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut w = s.clone();
    let mut betas = DMatrix::<f64>::zeros(n - 1, n);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        iterations += 1;
        let mut max_change: f64 = 0.0;
        for i in 0..n {
            let others: Vec<usize> = (0..n).filter(|&k| k != i).collect();
            let w11 = w.select_rows(&others).select_columns(&others);
            let s12 = DVector::from_iterator(n - 1, others.iter().map(|&k| s[(k, i)]));
            let mut beta = betas.column(i).into_owned();
            lasso_cd(&w11, &s12, mu, &mut beta, opts);
            let w12 = &w11 * &beta;
            for (a, &k) in others.iter().enumerate() {
                max_change = max_change.max((w[(k, i)] - w12[a]).abs());
                w[(k, i)] = w12[a];
                w[(i, k)] = w12[a];
            }
            betas.set_column(i, &beta);
        }
        if max_change <= opts.tol * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(ClarError::NumericalFailure(format!("glasso did not converge in {} passes", opts.max_iters)));
    }

    let mut precision = DMatrix::zeros(n, n);
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&k| k != i).collect();
        let beta = betas.column(i);
        let w12 = DVector::from_iterator(n - 1, others.iter().map(|&k| w[(k, i)]));
        let theta_ii = 1.0 / (w[(i, i)] - w12.dot(&beta));
        precision[(i, i)] = theta_ii;
        for (a, &k) in others.iter().enumerate() {
            precision[(k, i)] = -beta[a] * theta_ii;
        }
    }
    symmetrize_in_place(&mut precision);
    let pd = sym_eig(&precision)?;
    if pd.min_value() <= 0.0 {
        return Err(ClarError::NumericalFailure("glasso precision is not positive definite".into()));
    }
    let covariance = pd.map_values(|v| 1.0 / v);
    let kkt_residual = kkt_residual(&s, &precision, &covariance, mu);
    if kkt_residual >= KKT_TOL {
        return Err(ClarError::NumericalFailure(format!("glasso KKT residual {kkt_residual:e} too large")));
    }
    Ok(GlassoResult { precision, covariance, iterations, kkt_residual, loading })
}

/// Coordinate descent for `min_b b^T W b / 2 - s^T b + mu ||b||_1`.
fn lasso_cd(w11: &DMatrix<f64>, s12: &DVector<f64>, mu: f64, beta: &mut DVector<f64>, opts: &GlassoOptions) {
    let m = beta.len();
    let scale = s12.amax().max(f64::MIN_POSITIVE);
    for _ in 0..opts.inner_max_iters {
        let mut max_delta: f64 = 0.0;
        for k in 0..m {
            let partial = s12[k] - w11.column(k).dot(beta) + w11[(k, k)] * beta[k];
            let updated = soft_threshold(partial, mu) / w11[(k, k)];
            max_delta = max_delta.max((updated - beta[k]).abs() * w11[(k, k)]);
            beta[k] = updated;
        }
        if max_delta <= opts.tol * scale {
            break;
        }
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Sup-norm of the subgradient residual `S - W + mu * sign(Theta)` on the off-diagonal
/// (minimal over the subdifferential where `Theta_ij = 0`) and `S - W` on the diagonal.
pub fn kkt_residual(emp_cov: &DMatrix<f64>, precision: &DMatrix<f64>, covariance: &DMatrix<f64>, mu: f64) -> f64 {
    let n = emp_cov.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let diff = emp_cov[(i, j)] - covariance[(i, j)];
            let res = if i == j {
                diff.abs()
            } else if precision[(i, j)] != 0.0 {
                (diff + mu * precision[(i, j)].signum()).abs()
            } else {
                (diff.abs() - mu).max(0.0)
            };
            worst = worst.max(res);
        }
    }
    worst
}
