//! Dual objective and duality-gap certificates.
//!
//! The concomitant dual is a function of one matrix `Theta(l)` per repetition,
//! constrained to `||X^T Thetabar||_{2,inf} <= 1` and
//! `||sum_l Theta(l) Theta(l)^T||_2 <= r / (lambda^2 n^2 q)`.
//! A feasible point is obtained from the residuals by a uniform rescaling, which
//! shrinks the first constraint linearly and the second quadratically.

use nalgebra::DMatrix;

use crate::error::{invalid, ClarError, Result};
use crate::model::{
    check_shapes, datafit_from_gram, fitted, l21_norm, residual_gram_from_fit, CoStdMatrix, DesignMatrix,
    RepeatedObservations,
};
use crate::spectral::{spcl_gram, sym_eig};

/// Slack allowed on the dual constraints when testing feasibility.
pub const FEASIBILITY_SLACK: f64 = 1e-10;

/// Negative gaps below `-GAP_VIOLATION * max(1, |primal|)` indicate a bug, not rounding.
pub const GAP_VIOLATION: f64 = 1e-6;

/// `r` dual matrices `Theta(l)` with their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    thetas: Vec<DMatrix<f64>>,
    mean_theta: DMatrix<f64>,
    feasible: bool,
}

impl DualPoint {
    /// Wraps raw dual matrices; feasibility is established by [`DualPoint::certify`].
    pub fn new(thetas: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = thetas.first().ok_or_else(|| ClarError::InvalidInput("empty dual point".into()))?;
        let shape = first.shape();
        if thetas.iter().any(|t| t.shape() != shape) {
            return invalid("dual matrices must share one shape");
        }
        let mut mean_theta = DMatrix::zeros(shape.0, shape.1);
        for t in &thetas {
            mean_theta += t;
        }
        mean_theta /= thetas.len() as f64;
        Ok(Self { thetas, mean_theta, feasible: false })
    }

    pub fn thetas(&self) -> &[DMatrix<f64>] {
        &self.thetas
    }

    pub fn mean_theta(&self) -> &DMatrix<f64> {
        &self.mean_theta
    }

    pub fn is_feasible(&self) -> bool {
        self.feasible
    }

    /// `(||X^T Thetabar||_{2,inf}, ||sum_l Theta(l) Theta(l)^T||_2)`.
    pub fn constraint_values(&self, x: &DesignMatrix) -> Result<(f64, f64)> {
        if x.n() != self.mean_theta.nrows() {
            return invalid("dual point and design disagree on n");
        }
        let corr = x.matrix().transpose() * &self.mean_theta;
        let row_max = corr.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        let n = self.mean_theta.nrows();
        let mut outer = DMatrix::zeros(n, n);
        for t in &self.thetas {
            outer.gemm(1.0, t, &t.transpose(), 1.0);
        }
        let spectral = sym_eig(&outer)?.max_value().max(0.0);
        Ok((row_max, spectral))
    }

    /// Marks the point feasible if it satisfies both constraints of the dual domain.
    pub fn certify(&mut self, x: &DesignMatrix, lambda: f64) -> Result<bool> {
        let (n, q, r) = (self.mean_theta.nrows() as f64, self.mean_theta.ncols() as f64, self.thetas.len() as f64);
        let (row_max, spectral) = self.constraint_values(x)?;
        let spectral_bound = r / (lambda * lambda * n * n * q);
        self.feasible = row_max <= 1.0 + FEASIBILITY_SLACK && spectral <= spectral_bound * (1.0 + FEASIBILITY_SLACK);
        Ok(self.feasible)
    }
}

/// `D(Theta) = sigma/2 (1 - q n lambda^2 / r sum_l Tr Theta(l) Theta(l)^T) + lambda / r sum_l <Theta(l), Y(l)>`.
pub fn dual_objective(dual: &DualPoint, obs: &RepeatedObservations, lambda: f64, sigma_min: f64) -> Result<f64> {
    if !dual.feasible {
        return invalid("dual objective requested on an infeasible dual point");
    }
    if dual.thetas.len() != obs.r() || dual.mean_theta.shape() != (obs.n(), obs.q()) {
        return invalid("dual point shape does not match the observations");
    }
    let (n, q, r) = (obs.n() as f64, obs.q() as f64, obs.r() as f64);
    let trace: f64 = dual.thetas.iter().map(|t| t.norm_squared()).sum();
    let inner: f64 = dual.thetas.iter().zip(obs.repetitions()).map(|(t, y)| t.dot(y)).sum();
    Ok(0.5 * sigma_min * (1.0 - q * n * lambda * lambda / r * trace) + lambda / r * inner)
}

/// Dual candidate `Theta(l) = M (Y(l) - XB) / (n q lambda)` rescaled into the dual domain,
/// where `M` is the metric `S^-1` of the current noise estimate.
pub fn dual_from_residuals(
    obs: &RepeatedObservations,
    x: &DesignMatrix,
    beta: &DMatrix<f64>,
    metric: &DMatrix<f64>,
    lambda: f64,
) -> Result<DualPoint> {
    check_shapes(obs, x, beta)?;
    if metric.shape() != (obs.n(), obs.n()) {
        return invalid("metric must be n x n");
    }
    let (n, q, r) = (obs.n() as f64, obs.q() as f64, obs.r() as f64);
    let xb = x.matrix() * beta;
    let scale = 1.0 / (n * q * lambda);
    let thetas: Vec<DMatrix<f64>> = obs.repetitions().iter().map(|y| metric * (y - &xb) * scale).collect();
    let mut dual = DualPoint::new(thetas)?;
    let (row_max, spectral) = dual.constraint_values(x)?;
    let alpha = feasibility_scaling(row_max, spectral, r / (lambda * lambda * n * n * q));
    if alpha < 1.0 {
        for t in dual.thetas.iter_mut() {
            *t *= alpha;
        }
        dual.mean_theta *= alpha;
    }
    dual.feasible = true;
    Ok(dual)
}

fn feasibility_scaling(row_max: f64, spectral: f64, spectral_bound: f64) -> f64 {
    let mut alpha: f64 = 1.0;
    if row_max > 1.0 {
        alpha = alpha.min(1.0 / row_max);
    }
    if spectral > spectral_bound {
        alpha = alpha.min((spectral_bound / spectral).sqrt());
    }
    alpha
}

/// `primal - dual`, clamped at zero for rounding-level negatives.
pub fn duality_gap(primal_value: f64, dual_value: f64) -> Result<f64> {
    let gap = primal_value - dual_value;
    if !gap.is_finite() {
        return Err(ClarError::NumericalFailure(format!("non-finite duality gap ({primal_value} - {dual_value})")));
    }
    if gap < -GAP_VIOLATION * primal_value.abs().max(1.0) {
        return Err(ClarError::Internal(format!("weak duality violated: primal {primal_value} < dual {dual_value}")));
    }
    Ok(gap.max(0.0))
}

/// Primal value, dual value and gap at one coefficient iterate.
#[derive(Debug, Clone)]
pub struct GapEvaluation {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// Noise estimate optimal for the current coefficients (concomitant problems only).
    pub noise: Option<CoStdMatrix>,
}

/// Concomitant duality gap at `B`, with the primal evaluated at the optimal `S` for `B`.
///
/// Works from `cov_Y` and the mean residual, so the cost does not grow with `r`.
/// `floor` is the eigenvalue floor of the problem (`sigma_min`, or `sigma_min / sqrt(r)`
/// for the averaged problem).
pub fn concomitant_gap(
    obs: &RepeatedObservations,
    x: &DesignMatrix,
    beta: &DMatrix<f64>,
    floor: f64,
    lambda: f64,
) -> Result<GapEvaluation> {
    check_shapes(obs, x, beta)?;
    let xb = fitted(x, beta);
    concomitant_gap_from_fit(obs, x, &xb, l21_norm(beta), floor, lambda)
}

pub(crate) fn concomitant_gap_from_fit(
    obs: &RepeatedObservations,
    x: &DesignMatrix,
    xb: &DMatrix<f64>,
    penalty: f64,
    floor: f64,
    lambda: f64,
) -> Result<GapEvaluation> {
    let (n, q, r) = (obs.n() as f64, obs.q() as f64, obs.r() as f64);
    let gram = residual_gram_from_fit(obs, xb);
    let s = spcl_gram(&(&gram / (r * q)), floor)?;
    let primal = datafit_from_gram(obs, &gram, &s) + lambda * penalty;

    let s_inv = s.inverse();
    let c = 1.0 / (n * q * lambda);
    let mean_residual = obs.mean() - xb;
    let corr = x.matrix().transpose() * (s_inv * &mean_residual);
    let row_max = c * corr.row_iter().map(|row| row.norm()).fold(0.0, f64::max);

    let outer = s_inv * &gram * s_inv * (c * c);
    let spectral = sym_eig(&outer)?.max_value().max(0.0);
    let trace = outer.trace();
    // sum_l R(l) Y(l)^T = r (cov_Y - XB Ybar^T)
    let cross = (obs.cov_y() - xb * obs.mean().transpose()) * r;
    let inner = c * s_inv.dot(&cross);

    let alpha = feasibility_scaling(row_max, spectral, r / (lambda * lambda * n * n * q));
    let dual = 0.5 * floor * (1.0 - q * n * lambda * lambda / r * alpha * alpha * trace) + lambda / r * alpha * inner;
    let gap = duality_gap(primal, dual)?;
    Ok(GapEvaluation { primal, dual, gap, noise: Some(s) })
}

/// Multitask-lasso duality gap on the averaged observations.
///
/// Primal `||Ybar - XB||^2 / (2nq) + lambda ||B||_{2,1}`; dual
/// `lambda <Theta, Ybar> - n q lambda^2 / 2 ||Theta||^2` over `||X^T Theta||_{2,inf} <= 1`,
/// with `Theta = (Ybar - XB) / (n q lambda)` rescaled by `1 / max(1, ||X^T Theta||_{2,inf})`.
pub fn mtl_gap(
    obs: &RepeatedObservations,
    x: &DesignMatrix,
    beta: &DMatrix<f64>,
    lambda: f64,
) -> Result<GapEvaluation> {
    check_shapes(obs, x, beta)?;
    let residual = obs.mean() - fitted(x, beta);
    mtl_gap_from_residual(obs, x, &residual, l21_norm(beta), lambda)
}

pub(crate) fn mtl_gap_from_residual(
    obs: &RepeatedObservations,
    x: &DesignMatrix,
    residual: &DMatrix<f64>,
    penalty: f64,
    lambda: f64,
) -> Result<GapEvaluation> {
    let nq = (obs.n() * obs.q()) as f64;
    let primal = residual.norm_squared() / (2.0 * nq) + lambda * penalty;
    let corr = x.matrix().transpose() * residual;
    let row_max = corr.row_iter().map(|row| row.norm()).fold(0.0, f64::max) / (nq * lambda);
    let alpha = 1.0 / row_max.max(1.0);
    let theta_scale = alpha / (nq * lambda);
    let dual = lambda * theta_scale * residual.dot(obs.mean())
        - 0.5 * nq * lambda * lambda * theta_scale * theta_scale * residual.norm_squared();
    let gap = duality_gap(primal, dual)?;
    Ok(GapEvaluation { primal, dual, gap, noise: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DesignMatrix, RepeatedObservations) {
        let x = DesignMatrix::new(DMatrix::from_fn(5, 4, |i, j| ((i * 4 + j) as f64 * 0.7).sin())).unwrap();
        let reps = (0..3).map(|l| DMatrix::from_fn(5, 2, |i, j| ((i + 3 * j + 7 * l) as f64 * 1.3).cos())).collect();
        (x, RepeatedObservations::new(reps).unwrap())
    }

    #[test]
    fn zero_dual_point_value() {
        let (_, obs) = toy();
        let mut dual = DualPoint::new(vec![DMatrix::zeros(5, 2); 3]).unwrap();
        dual.feasible = true;
        assert_eq!(dual_objective(&dual, &obs, 0.5, 0.2).unwrap(), 0.1);
    }

    #[test]
    fn infeasible_dual_rejected() {
        let (_, obs) = toy();
        let dual = DualPoint::new(vec![DMatrix::zeros(5, 2); 3]).unwrap();
        assert!(matches!(dual_objective(&dual, &obs, 0.5, 0.2), Err(ClarError::InvalidInput(_))));
    }

    #[test]
    fn zero_residual_gives_zero_dual() {
        let (x, _) = toy();
        let beta = DMatrix::from_fn(4, 2, |i, j| (i + j) as f64);
        let y = x.matrix() * &beta;
        let obs = RepeatedObservations::new(vec![y.clone(), y]).unwrap();
        let dual = dual_from_residuals(&obs, &x, &beta, &DMatrix::identity(5, 5), 0.1).unwrap();
        assert!(dual.thetas().iter().all(|t| t.norm() == 0.0));
        assert!(dual.is_feasible());
    }

    #[test]
    fn rescaled_point_is_feasible() {
        let (x, obs) = toy();
        let beta = DMatrix::from_fn(4, 2, |i, j| 0.1 * (i as f64 - j as f64));
        for lambda in [1e-4, 1e-2, 1.0] {
            let mut dual = dual_from_residuals(&obs, &x, &beta, &DMatrix::identity(5, 5), lambda).unwrap();
            assert!(dual.certify(&x, lambda).unwrap());
        }
    }

    #[test]
    fn gap_clamps_rounding_and_flags_violations() {
        assert_eq!(duality_gap(1.0, 1.0 + 1e-12).unwrap(), 0.0);
        assert!((duality_gap(2.0, 1.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(duality_gap(1.0, 1.1), Err(ClarError::Internal(_))));
    }

    #[test]
    fn gram_route_matches_explicit_dual() {
        let (x, obs) = toy();
        let beta = DMatrix::from_fn(4, 2, |i, j| 0.05 * (i as f64 + 1.0) * if j == 0 { 1.0 } else { -1.0 });
        let floor = 0.05;
        let lambda = 0.01;
        let eval = concomitant_gap(&obs, &x, &beta, floor, lambda).unwrap();
        let s = eval.noise.as_ref().unwrap();
        let dual = dual_from_residuals(&obs, &x, &beta, s.inverse(), lambda).unwrap();
        let d = dual_objective(&dual, &obs, lambda, floor).unwrap();
        assert!((d - eval.dual).abs() < 1e-12 * d.abs().max(1.0), "{d} vs {}", eval.dual);
    }
}
