//! Block coordinate descent for the concomitant estimator and its competitors.
//!
//! Every estimator shares one loop: the noise block is refreshed every
//! `s_update_freq` sweeps (starting with the first sweep), then each coefficient
//! row is updated in ascending order by block soft-thresholding under the current
//! noise metric. The estimators differ only in which observations they see,
//! how the noise block is minimized and the floor applied to it.

pub mod glasso;

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::duality::{concomitant_gap_from_fit, mtl_gap_from_residual};
use crate::error::{invalid, ClarError, Result};
use crate::model::{
    check_shapes, fitted, l21_norm, residual_gram, residual_gram_from_fit, CoStdMatrix, Coefficients, DesignMatrix,
    RepeatedObservations, SolverConfig,
};
use crate::spectral::{cl_gram, spcl_gram};

pub use glasso::{glasso, glasso_with, GlassoOptions, GlassoResult};

/// Relative amount by which [`lambda_max`] is rounded up.
pub const LAMBDA_MAX_MARGIN: f64 = 1e-12;

/// Block soft-thresholding `(1 - tau / ||x||)_+ x`.
pub fn bst(x: &DVector<f64>, tau: f64) -> DVector<f64> {
    let norm = x.norm();
    if norm <= tau {
        DVector::zeros(x.len())
    } else {
        x * (1.0 - tau / norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    Clar,
    Sgcl,
    Mtl,
    Mle,
    Mler,
    Mrcer { mu: f64 },
}

impl EstimatorKind {
    pub const NAMES: [&'static str; 6] = ["clar", "sgcl", "mtl", "mle", "mler", "mrcer"];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Clar => "clar",
            EstimatorKind::Sgcl => "sgcl",
            EstimatorKind::Mtl => "mtl",
            EstimatorKind::Mle => "mle",
            EstimatorKind::Mler => "mler",
            EstimatorKind::Mrcer { .. } => "mrcer",
        }
    }

    /// Convex estimators report duality gaps and stop on them.
    pub fn is_convex(&self) -> bool {
        matches!(self, EstimatorKind::Clar | EstimatorKind::Sgcl | EstimatorKind::Mtl)
    }

    /// Parses an estimator name; `mrcer` needs a graphical-lasso penalty.
    pub fn parse(name: &str, mu: Option<f64>) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "clar" => Ok(EstimatorKind::Clar),
            "sgcl" => Ok(EstimatorKind::Sgcl),
            "mtl" => Ok(EstimatorKind::Mtl),
            "mle" => Ok(EstimatorKind::Mle),
            "mler" => Ok(EstimatorKind::Mler),
            "mrcer" => match mu {
                Some(mu) if mu.is_finite() && mu > 0.0 => Ok(EstimatorKind::Mrcer { mu }),
                Some(mu) => Err(ClarError::Config(format!("mrcer penalty must be positive, got {mu}"))),
                None => Err(ClarError::Config("mrcer requires a graphical-lasso penalty mu".into())),
            },
            other => Err(ClarError::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = ClarError;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, None)
    }
}

/// Output of one solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub beta: Coefficients,
    /// Co-standard deviation `S` for the concomitant estimators, covariance `Sigma`
    /// for the likelihood-based ones, identity for the multitask lasso.
    pub noise: CoStdMatrix,
    pub objective_trace: Vec<f64>,
    /// Empty for the non-convex estimators.
    pub gap_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: Duration,
    pub warnings: Vec<String>,
    /// Coefficients after every sweep, only kept when requested.
    pub iterates: Vec<DMatrix<f64>>,
}

impl SolveResult {
    pub fn final_gap(&self) -> Option<f64> {
        self.gap_trace.last().copied()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions<'a> {
    pub warm_start: Option<&'a DMatrix<f64>>,
    pub record_iterates: bool,
}

#[derive(Debug, Clone, Copy)]
enum NoiseBlock {
    /// `S = SpCl(E, floor)`, objective `<S^-1, G>/(2nqr) + Tr S/(2n)`.
    Concomitant { floor: f64 },
    /// `Sigma = Cl(E, floor)`, objective `<Sigma^-1, G>/(2nqr) + log det Sigma/(2n)`.
    Likelihood { floor: f64 },
    /// Precision from the graphical lasso on `E`, loaded by `floor` when singular.
    SparsePrecision { mu: f64, floor: f64 },
    /// Homoscedastic noise, `S = I`.
    Identity,
}

struct Problem<'a> {
    data: Cow<'a, RepeatedObservations>,
    block: NoiseBlock,
}

impl<'a> Problem<'a> {
    fn new(kind: EstimatorKind, obs: &'a RepeatedObservations, sigma_min: f64) -> Self {
        let r = obs.r() as f64;
        let (data, block) = match kind {
            EstimatorKind::Clar => (Cow::Borrowed(obs), NoiseBlock::Concomitant { floor: sigma_min }),
            EstimatorKind::Sgcl => {
                (Cow::Owned(obs.averaged()), NoiseBlock::Concomitant { floor: sigma_min / r.sqrt() })
            }
            EstimatorKind::Mtl => (Cow::Owned(obs.averaged()), NoiseBlock::Identity),
            EstimatorKind::Mle => {
                (Cow::Owned(obs.averaged()), NoiseBlock::Likelihood { floor: sigma_min * sigma_min / (r * r) })
            }
            EstimatorKind::Mler => (Cow::Borrowed(obs), NoiseBlock::Likelihood { floor: sigma_min * sigma_min }),
            EstimatorKind::Mrcer { mu } => {
                (Cow::Borrowed(obs), NoiseBlock::SparsePrecision { mu, floor: sigma_min * sigma_min })
            }
        };
        Self { data, block }
    }

    fn noise_update(&self, gram: &DMatrix<f64>) -> Result<CoStdMatrix> {
        let data = &self.data;
        let emp = gram / (data.r() * data.q()) as f64;
        match self.block {
            NoiseBlock::Concomitant { floor } => spcl_gram(&emp, floor),
            NoiseBlock::Likelihood { floor } => cl_gram(&emp, floor),
            NoiseBlock::SparsePrecision { mu, floor } => {
                let opts = GlassoOptions { loading_floor: floor, ..GlassoOptions::default() };
                CoStdMatrix::from_precision(&glasso_with(&emp, mu, &opts)?.precision)
            }
            NoiseBlock::Identity => CoStdMatrix::scaled_identity(data.n(), 1.0),
        }
    }

    fn objective(
        &self,
        gram: &DMatrix<f64>,
        residual: &DMatrix<f64>,
        noise: &CoStdMatrix,
        penalty: f64,
        lambda: f64,
    ) -> f64 {
        let data = &self.data;
        let (n, q, r) = (data.n() as f64, data.q() as f64, data.r() as f64);
        let fit = match self.block {
            NoiseBlock::Concomitant { .. } => noise.inverse().dot(gram) / (2.0 * n * q * r) + noise.trace() / (2.0 * n),
            NoiseBlock::Likelihood { .. } => {
                noise.inverse().dot(gram) / (2.0 * n * q * r) + noise.log_det() / (2.0 * n)
            }
            NoiseBlock::SparsePrecision { mu, .. } => {
                let precision = noise.inverse();
                let off_l1 = precision.iter().map(|v| v.abs()).sum::<f64>() - precision.diagonal().abs().sum();
                precision.dot(gram) / (2.0 * n * q * r) + noise.log_det() / (2.0 * n) + mu * off_l1 / (2.0 * n)
            }
            NoiseBlock::Identity => residual.norm_squared() / (2.0 * n * q),
        };
        fit + lambda * penalty
    }
}

/// Solves `kind` from a cold start.
pub fn solve(
    kind: EstimatorKind,
    obs: &RepeatedObservations,
    x: &DesignMatrix,
    config: &SolverConfig,
) -> Result<SolveResult> {
    solve_with(kind, obs, x, config, &SolveOptions::default())
}

pub fn solve_clar(obs: &RepeatedObservations, x: &DesignMatrix, config: &SolverConfig) -> Result<SolveResult> {
    solve(EstimatorKind::Clar, obs, x, config)
}

/// Concomitant estimator on the averaged observations with floor `sigma_min / sqrt(r)`.
pub fn solve_sgcl(obs: &RepeatedObservations, x: &DesignMatrix, config: &SolverConfig) -> Result<SolveResult> {
    solve(EstimatorKind::Sgcl, obs, x, config)
}

pub fn solve_mtl(obs: &RepeatedObservations, x: &DesignMatrix, config: &SolverConfig) -> Result<SolveResult> {
    solve(EstimatorKind::Mtl, obs, x, config)
}

pub fn solve_mle(obs: &RepeatedObservations, x: &DesignMatrix, config: &SolverConfig) -> Result<SolveResult> {
    solve(EstimatorKind::Mle, obs, x, config)
}

pub fn solve_mler(obs: &RepeatedObservations, x: &DesignMatrix, config: &SolverConfig) -> Result<SolveResult> {
    solve(EstimatorKind::Mler, obs, x, config)
}

pub fn solve_mrcer(
    obs: &RepeatedObservations,
    x: &DesignMatrix,
    config: &SolverConfig,
    mu: f64,
) -> Result<SolveResult> {
    solve(EstimatorKind::Mrcer { mu }, obs, x, config)
}

pub fn solve_with(
    kind: EstimatorKind,
    obs: &RepeatedObservations,
    x: &DesignMatrix,
    config: &SolverConfig,
    opts: &SolveOptions<'_>,
) -> Result<SolveResult> {
    config.validate()?;
    if let EstimatorKind::Mrcer { mu } = kind {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(ClarError::Config(format!("mrcer penalty must be positive, got {mu}")));
        }
    }
    let start = Instant::now();
    let problem = Problem::new(kind, obs, config.sigma_min);
    let data = problem.data.as_ref();
    let (p, q) = (x.p(), data.q());
    let mut beta = match opts.warm_start {
        Some(init) => init.clone(),
        None => DMatrix::zeros(p, q),
    };
    check_shapes(data, x, &beta)?;

    let lambda = config.lambda;
    let threshold = lambda * (data.n() * q) as f64;
    let mut residual = data.mean() - fitted(x, &beta);
    let mut noise = problem.noise_update(&residual_gram_from_fit(data, &(data.mean() - &residual)))?;
    let mut metric_x = x.matrix().clone();
    let mut lips = DVector::from_fn(p, |j, _| x.column_norms()[j].powi(2));
    let mut frozen = vec![false; p];

    let mut result = SolveResult {
        beta: Coefficients::zeros(p, q),
        noise: noise.clone(),
        objective_trace: Vec::new(),
        gap_trace: Vec::new(),
        iterations: 0,
        converged: false,
        wall_time: Duration::ZERO,
        warnings: Vec::new(),
        iterates: Vec::new(),
    };

    for t in 1..=config.max_iters {
        if (t - 1) % config.s_update_freq == 0 && !matches!(problem.block, NoiseBlock::Identity) {
            if t > 1 {
                let fit = data.mean() - &residual;
                noise = problem.noise_update(&residual_gram_from_fit(data, &fit))?;
            }
            metric_x = noise.inverse() * x.matrix();
            lips = DVector::from_fn(p, |j, _| x.matrix().column(j).dot(&metric_x.column(j)));
        }

        for j in 0..p {
            if lips[j] <= 0.0 {
                if !frozen[j] {
                    frozen[j] = true;
                    let msg = format!("row {j} frozen at zero: column has zero norm under the noise metric");
                    warn!("{msg}");
                    result.warnings.push(msg);
                }
                let row = beta.row(j).transpose();
                if row.iter().any(|v| *v != 0.0) {
                    residual.ger(1.0, &x.matrix().column(j), &row, 1.0);
                    beta.row_mut(j).fill(0.0);
                }
                continue;
            }
            row_step(j, &mut beta, x, &metric_x, lips[j], threshold, &mut residual);
        }

        let fit = data.mean() - &residual;
        let gram = residual_gram_from_fit(data, &fit);
        let penalty = l21_norm(&beta);
        let objective = problem.objective(&gram, &residual, &noise, penalty, lambda);
        result.iterations = t;
        if !objective.is_finite() {
            let tail: Vec<String> =
                result.objective_trace.iter().rev().take(5).rev().map(|v| format!("{v:e}")).collect();
            return Err(ClarError::NumericalFailure(format!(
                "{kind} objective became {objective} at sweep {t} (previous: [{}])",
                tail.join(", ")
            )));
        }
        let previous = result.objective_trace.last().copied();
        result.objective_trace.push(objective);
        if opts.record_iterates {
            result.iterates.push(beta.clone());
        }

        let stop = match problem.block {
            NoiseBlock::Concomitant { floor } => {
                let gap = concomitant_gap_from_fit(data, x, &fit, penalty, floor, lambda)?.gap;
                result.gap_trace.push(gap);
                gap < config.gap_tol
            }
            NoiseBlock::Identity => {
                let gap = mtl_gap_from_residual(data, x, &residual, penalty, lambda)?.gap;
                result.gap_trace.push(gap);
                gap < config.gap_tol
            }
            _ => previous.is_some_and(|prev| prev - objective < config.gap_tol / 10.0),
        };
        if stop {
            result.converged = true;
            break;
        }
    }

    debug!(
        "{kind}: {} sweeps, converged={}, objective={:?}",
        result.iterations,
        result.converged,
        result.objective_trace.last()
    );
    result.beta = Coefficients::from_matrix(beta);
    result.noise = noise;
    result.wall_time = start.elapsed();
    Ok(result)
}

/// One row update `B_j <- BST(X_j^T M R / L_j, lambda n q / L_j)` with residual bookkeeping.
fn row_step(
    j: usize,
    beta: &mut DMatrix<f64>,
    x: &DesignMatrix,
    metric_x: &DMatrix<f64>,
    lip: f64,
    threshold: f64,
    residual: &mut DMatrix<f64>,
) {
    let xj = x.matrix().column(j);
    let old = beta.row(j).transpose();
    if old.iter().any(|v| *v != 0.0) {
        residual.ger(1.0, &xj, &old, 1.0);
    }
    let z = residual.tr_mul(&metric_x.column(j)) / lip;
    let new = bst(&z, threshold / lip);
    if new.iter().any(|v| *v != 0.0) {
        residual.ger(-1.0, &xj, &new, 1.0);
    }
    beta.set_row(j, &new.transpose());
}

/// Updates row `j` of `beta` under the metric `s_inv`; `mean_residual` must equal
/// `Ybar - X beta` and is kept consistent. Returns `false` when the row is frozen
/// because `||X_j||_{S^-1} = 0`.
pub fn update_beta_row_clar(
    j: usize,
    beta: &mut DMatrix<f64>,
    x: &DesignMatrix,
    mean_residual: &mut DMatrix<f64>,
    s_inv: &DMatrix<f64>,
    lambda: f64,
) -> Result<bool> {
    let (n, q) = mean_residual.shape();
    if j >= x.p() || beta.shape() != (x.p(), q) || n != x.n() || s_inv.shape() != (n, n) {
        return invalid("row update called with inconsistent shapes");
    }
    let wj = s_inv * x.matrix().column(j);
    let lip = x.matrix().column(j).dot(&wj);
    if lip <= 0.0 {
        let row = beta.row(j).transpose();
        mean_residual.ger(1.0, &x.matrix().column(j), &row, 1.0);
        beta.row_mut(j).fill(0.0);
        return Ok(false);
    }
    let mut metric_x = DMatrix::zeros(n, x.p());
    metric_x.set_column(j, &wj);
    row_step(j, beta, x, &metric_x, lip, lambda * (n * q) as f64, mean_residual);
    Ok(true)
}

/// Closed-form noise block `SpCl(sum_l R(l) R(l)^T / (rq), sigma_min)`.
pub fn update_s_clar(
    obs: &RepeatedObservations,
    x: &DesignMatrix,
    beta: &DMatrix<f64>,
    sigma_min: f64,
) -> Result<CoStdMatrix> {
    let gram = residual_gram(obs, x, beta)?;
    spcl_gram(&(gram / (obs.r() * obs.q()) as f64), sigma_min)
}

/// Closed-form covariance block `Cl(sum_l R(l) R(l)^T / (rq), floor)`.
pub fn update_sigma_mle(
    obs: &RepeatedObservations,
    x: &DesignMatrix,
    beta: &DMatrix<f64>,
    floor: f64,
) -> Result<CoStdMatrix> {
    let gram = residual_gram(obs, x, beta)?;
    cl_gram(&(gram / (obs.r() * obs.q()) as f64), floor)
}

/// Smallest `lambda` for which `B = 0` is a fixed point of the solver started at zero.
///
/// With `M` the noise metric obtained from the residuals at `B = 0`, this is
/// `||X^T M Ybar||_{2,inf} / (nq)`; for the convex estimators it is the exact
/// critical regularization level. The returned value includes a relative
/// `LAMBDA_MAX_MARGIN`, and every row update at that level returns exactly zero.
pub fn lambda_max(kind: EstimatorKind, obs: &RepeatedObservations, x: &DesignMatrix, sigma_min: f64) -> Result<f64> {
    if x.n() != obs.n() {
        return invalid(format!("design has {} rows but observations have {}", x.n(), obs.n()));
    }
    if !(sigma_min.is_finite() && sigma_min > 0.0) {
        return Err(ClarError::Config(format!("sigma_min must be positive, got {sigma_min}")));
    }
    let problem = Problem::new(kind, obs, sigma_min);
    let data = problem.data.as_ref();
    let zero_fit = DMatrix::zeros(data.n(), data.q());
    let weighted = match problem.block {
        NoiseBlock::Identity => data.mean().clone(),
        _ => problem.noise_update(&residual_gram_from_fit(data, &zero_fit))?.inverse() * data.mean(),
    };
    let corr = x.matrix().transpose() * weighted;
    let row_max = corr.row_iter().map(|row| row.norm()).fold(0.0, f64::max);
    Ok(row_max / (data.n() * data.q()) as f64 * (1.0 + LAMBDA_MAX_MARGIN))
}

pub fn lambda_max_clar(obs: &RepeatedObservations, x: &DesignMatrix, sigma_min: f64) -> Result<f64> {
    lambda_max(EstimatorKind::Clar, obs, x, sigma_min)
}

pub fn lambda_max_mtl(obs: &RepeatedObservations, x: &DesignMatrix) -> Result<f64> {
    lambda_max(EstimatorKind::Mtl, obs, x, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(seed: u64) -> (DesignMatrix, RepeatedObservations) {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let x = DMatrix::from_fn(8, 12, |_, _| next());
        let reps = (0..3).map(|_| DMatrix::from_fn(8, 4, |_, _| next())).collect();
        (DesignMatrix::new(x).unwrap(), RepeatedObservations::new(reps).unwrap())
    }

    #[test]
    fn bst_cases() {
        let x = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(bst(&x, 0.0), x);
        assert_eq!(bst(&x, 10.0), DVector::zeros(2));
        assert_eq!(bst(&x, 2.5), DVector::from_vec(vec![1.5, 2.0]));
        assert_eq!(bst(&DVector::zeros(3), 0.0), DVector::zeros(3));
    }

    #[test]
    fn parse_names() {
        for name in EstimatorKind::NAMES {
            let kind = EstimatorKind::parse(name, Some(0.5)).unwrap();
            assert_eq!(kind.name(), name);
        }
        assert!(EstimatorKind::parse("mrcer", None).is_err());
        assert!("lasso".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn s_update_examples() {
        let x = DesignMatrix::new(DMatrix::from_element(2, 1, 1.0)).unwrap();
        let obs = RepeatedObservations::new(vec![DMatrix::from_column_slice(2, 1, &[2.0, 0.0])]).unwrap();
        let s = update_s_clar(&obs, &x, &DMatrix::zeros(1, 1), 0.5).unwrap();
        assert!((s.matrix() - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]))).amax() < 1e-14);

        let exact = RepeatedObservations::new(vec![DMatrix::from_element(2, 1, 1.5)]).unwrap();
        let s = update_s_clar(&exact, &x, &DMatrix::from_element(1, 1, 1.5), 0.3).unwrap();
        assert!((s.matrix() - DMatrix::identity(2, 2) * 0.3).amax() < 1e-14);
    }

    #[test]
    fn lambda_max_zero_for_zero_data() {
        let (x, _) = instance(1);
        let obs = RepeatedObservations::new(vec![DMatrix::zeros(8, 4)]).unwrap();
        assert_eq!(lambda_max_clar(&obs, &x, 0.1).unwrap(), 0.0);
        assert_eq!(lambda_max_mtl(&obs, &x).unwrap(), 0.0);
    }

    #[test]
    fn above_lambda_max_gives_zero_for_every_estimator() {
        let (x, obs) = instance(3);
        let sigma_min = 1e-3;
        for kind in [
            EstimatorKind::Clar,
            EstimatorKind::Sgcl,
            EstimatorKind::Mtl,
            EstimatorKind::Mle,
            EstimatorKind::Mler,
            EstimatorKind::Mrcer { mu: 0.05 },
        ] {
            let lmax = lambda_max(kind, &obs, &x, sigma_min).unwrap();
            let res = solve(kind, &obs, &x, &SolverConfig::new(1.01 * lmax, sigma_min)).unwrap();
            assert!(res.beta.support().is_empty(), "{kind}");
            let res = solve(kind, &obs, &x, &SolverConfig::new(0.9 * lmax, sigma_min)).unwrap();
            assert!(!res.beta.support().is_empty(), "{kind}");
        }
    }

    #[test]
    fn convex_solvers_converge_monotonically() {
        let (x, obs) = instance(5);
        for kind in [EstimatorKind::Clar, EstimatorKind::Sgcl, EstimatorKind::Mtl] {
            let lmax = lambda_max(kind, &obs, &x, 1e-2).unwrap();
            let res = solve(kind, &obs, &x, &SolverConfig::new(0.2 * lmax, 1e-2).with_gap_tol(1e-9)).unwrap();
            assert!(res.converged, "{kind}");
            for w in res.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-10, "{kind}: {} -> {}", w[0], w[1]);
            }
            assert!(res.gap_trace.iter().all(|g| *g >= 0.0));
        }
    }

    #[test]
    fn nonconvex_solvers_decrease() {
        let (x, obs) = instance(7);
        for kind in [EstimatorKind::Mle, EstimatorKind::Mler, EstimatorKind::Mrcer { mu: 0.01 }] {
            let lmax = lambda_max(kind, &obs, &x, 1e-2).unwrap();
            let res = solve(kind, &obs, &x, &SolverConfig::new(0.3 * lmax, 1e-2)).unwrap();
            assert!(res.gap_trace.is_empty());
            for w in res.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{kind}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn row_update_keeps_residual_consistent() {
        let (x, obs) = instance(9);
        let mut beta = DMatrix::from_fn(12, 4, |i, j| if i % 3 == 0 { 0.1 * (j as f64 + 1.0) } else { 0.0 });
        let mut residual = obs.mean() - x.matrix() * &beta;
        let s_inv = DMatrix::identity(8, 8) * 2.0;
        for j in 0..12 {
            assert!(update_beta_row_clar(j, &mut beta, &x, &mut residual, &s_inv, 1e-3).unwrap());
        }
        assert!((&residual - (obs.mean() - x.matrix() * &beta)).amax() < 1e-12);
    }

    #[test]
    fn warm_start_shape_is_checked() {
        let (x, obs) = instance(2);
        let bad = DMatrix::zeros(3, 3);
        let opts = SolveOptions { warm_start: Some(&bad), record_iterates: false };
        assert!(solve_with(EstimatorKind::Clar, &obs, &x, &SolverConfig::new(0.1, 0.1), &opts).is_err());
    }
}
