//! Data model for repeated multitask regression: `Y(l) = X B* + S* E(l)`.
//!
//! Holds the design, the repeated observations with their cached mean and Gram
//! matrix, row-sparse coefficients, the co-standard deviation matrix and the
//! concomitant objective with its `O(q n^2)` residual Gram computation.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, ClarError, Result};
use crate::spectral::{self, symmetrize_in_place, SpectralDecomposition};

/// Design matrix `X` (n x p) with cached column norms.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    column_norms: DVector<f64>,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return invalid("design matrix must have at least one row and one column");
        }
        if !x.iter().all(|v| v.is_finite()) {
            return invalid("design matrix contains non-finite entries");
        }
        let column_norms = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.norm()));
        Ok(Self { x, column_norms })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_norms(&self) -> &DVector<f64> {
        &self.column_norms
    }
}

/// The `r` repetitions `Y(1..r)` (each n x q), their mean and `cov_Y = 1/r sum Y(l) Y(l)^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedObservations {
    repetitions: Vec<DMatrix<f64>>,
    mean: DMatrix<f64>,
    cov_y: DMatrix<f64>,
}

impl RepeatedObservations {
    pub fn new(repetitions: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = repetitions.first().ok_or_else(|| ClarError::InvalidInput("no repetitions given".into()))?;
        let (n, q) = first.shape();
        if n == 0 || q == 0 {
            return invalid("observations must be non-empty");
        }
        for (l, rep) in repetitions.iter().enumerate() {
            if rep.shape() != (n, q) {
                return invalid(format!("repetition {l} has shape {}x{}, expected {n}x{q}", rep.nrows(), rep.ncols()));
            }
            if !rep.iter().all(|v| v.is_finite()) {
                return invalid(format!("repetition {l} contains non-finite entries"));
            }
        }
        let r = repetitions.len() as f64;
        let mut mean = DMatrix::zeros(n, q);
        let mut cov_y = DMatrix::zeros(n, n);
        for rep in &repetitions {
            mean += rep;
            cov_y.gemm(1.0, rep, &rep.transpose(), 1.0);
        }
        mean /= r;
        cov_y /= r;
        symmetrize_in_place(&mut cov_y);
        Ok(Self { repetitions, mean, cov_y })
    }

    /// A single repetition equal to `mean`: the averaged-data view.
    pub fn from_mean(mean: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![mean])
    }

    pub fn averaged(&self) -> Self {
        Self::from_mean(self.mean.clone()).expect("mean of valid observations is valid")
    }

    pub fn n(&self) -> usize {
        self.mean.nrows()
    }

    pub fn q(&self) -> usize {
        self.mean.ncols()
    }

    pub fn r(&self) -> usize {
        self.repetitions.len()
    }

    pub fn repetitions(&self) -> &[DMatrix<f64>] {
        &self.repetitions
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn cov_y(&self) -> &DMatrix<f64> {
        &self.cov_y
    }

    pub fn into_repetitions(self) -> Vec<DMatrix<f64>> {
        self.repetitions
    }
}

/// Row-sparse coefficient matrix `B` (p x q) with its row support.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    beta: DMatrix<f64>,
    support: BTreeSet<usize>,
}

impl Coefficients {
    pub fn zeros(p: usize, q: usize) -> Self {
        Self { beta: DMatrix::zeros(p, q), support: BTreeSet::new() }
    }

    pub fn from_matrix(beta: DMatrix<f64>) -> Self {
        let support = nonzero_rows(&beta);
        Self { beta, support }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.beta
    }

    /// Rows with strictly positive Euclidean norm.
    pub fn support(&self) -> &BTreeSet<usize> {
        &self.support
    }

    pub fn p(&self) -> usize {
        self.beta.nrows()
    }

    pub fn q(&self) -> usize {
        self.beta.ncols()
    }

    pub fn l21_norm(&self) -> f64 {
        l21_norm(&self.beta)
    }
}

pub(crate) fn nonzero_rows(beta: &DMatrix<f64>) -> BTreeSet<usize> {
    beta.row_iter().enumerate().filter(|(_, row)| row.norm() > 0.0).map(|(j, _)| j).collect()
}

pub fn l21_norm(beta: &DMatrix<f64>) -> f64 {
    beta.row_iter().map(|row| row.norm()).sum()
}

/// Symmetric positive-definite matrix kept together with its inverse and spectrum.
///
/// Used for the co-standard deviation `S` of the concomitant estimators and for
/// the covariance `Sigma` of the likelihood-based competitors.
#[derive(Debug, Clone, PartialEq)]
pub struct CoStdMatrix {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    decomposition: SpectralDecomposition,
}

impl CoStdMatrix {
    /// Builds `U diag(values) U^T`; every value must be positive.
    pub fn from_spectrum(basis: DMatrix<f64>, values: DVector<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(ClarError::NumericalFailure(format!("non-positive eigenvalue {v:e} in SPD matrix")));
        }
        let decomposition = SpectralDecomposition { basis, values };
        let matrix = decomposition.reconstruct();
        let inverse = decomposition.map_values(|v| 1.0 / v);
        Ok(Self { matrix, inverse, decomposition })
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Result<Self> {
        Self::from_spectrum(DMatrix::identity(n, n), DVector::from_element(n, scale))
    }

    pub fn from_matrix(matrix: &DMatrix<f64>) -> Result<Self> {
        let dec = spectral::sym_eig(matrix)?;
        Self::from_spectrum(dec.basis, dec.values)
    }

    /// The SPD matrix whose inverse is `precision`.
    pub fn from_precision(precision: &DMatrix<f64>) -> Result<Self> {
        let dec = spectral::sym_eig(precision)?;
        if dec.min_value() <= 0.0 {
            return Err(ClarError::NumericalFailure("precision matrix is not positive definite".into()));
        }
        let values = dec.values.map(|v| 1.0 / v);
        // Reverse to keep the descending convention.
        let n = values.len();
        let basis = DMatrix::from_fn(n, n, |i, j| dec.basis[(i, n - 1 - j)]);
        let values = DVector::from_fn(n, |i, _| values[n - 1 - i]);
        Self::from_spectrum(basis, values)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.decomposition
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.decomposition.values.sum()
    }

    pub fn log_det(&self) -> f64 {
        self.decomposition.values.iter().map(|v| v.ln()).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.decomposition.min_value()
    }
}

/// Parameters of one block-coordinate-descent solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    pub sigma_min: f64,
    /// Coefficient sweeps per noise update.
    pub s_update_freq: usize,
    pub max_iters: usize,
    pub gap_tol: f64,
}

impl SolverConfig {
    pub const DEFAULT_S_UPDATE_FREQ: usize = 10;
    pub const DEFAULT_MAX_ITERS: usize = 10_000;
    pub const DEFAULT_GAP_TOL: f64 = 1e-6;

    pub fn new(lambda: f64, sigma_min: f64) -> Self {
        Self {
            lambda,
            sigma_min,
            s_update_freq: Self::DEFAULT_S_UPDATE_FREQ,
            max_iters: Self::DEFAULT_MAX_ITERS,
            gap_tol: Self::DEFAULT_GAP_TOL,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_s_update_freq(mut self, freq: usize) -> Self {
        self.s_update_freq = freq;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_gap_tol(mut self, gap_tol: f64) -> Self {
        self.gap_tol = gap_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(ClarError::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.sigma_min.is_finite() && self.sigma_min > 0.0) {
            return Err(ClarError::Config(format!("sigma_min must be positive, got {}", self.sigma_min)));
        }
        if self.s_update_freq == 0 {
            return Err(ClarError::Config("s_update_freq must be at least 1".into()));
        }
        if !(self.gap_tol.is_finite() && self.gap_tol > 0.0) {
            return Err(ClarError::Config(format!("gap_tol must be positive, got {}", self.gap_tol)));
        }
        Ok(())
    }
}

/// Default smoothing level `||Ybar|| / (1000 n q)`.
pub fn default_sigma_min(obs: &RepeatedObservations) -> f64 {
    obs.mean().norm() / (1000.0 * (obs.n() * obs.q()) as f64)
}

pub(crate) fn check_shapes(obs: &RepeatedObservations, x: &DesignMatrix, beta: &DMatrix<f64>) -> Result<()> {
    if x.n() != obs.n() {
        return invalid(format!("design has {} rows but observations have {}", x.n(), obs.n()));
    }
    if beta.shape() != (x.p(), obs.q()) {
        return invalid(format!("coefficients are {}x{}, expected {}x{}", beta.nrows(), beta.ncols(), x.p(), obs.q()));
    }
    Ok(())
}

/// `X B`, touching only the nonzero rows of `B`.
pub fn fitted(x: &DesignMatrix, beta: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.n(), beta.ncols());
    for (j, row) in beta.row_iter().enumerate() {
        if row.iter().any(|&v| v != 0.0) {
            out.ger(1.0, &x.matrix().column(j), &row.transpose(), 1.0);
        }
    }
    out
}

/// `sum_l (Y(l) - X B)(Y(l) - X B)^T` from the cached `cov_Y` and mean, at a cost independent of `r`:
/// `r cov_Y - r Ybar (XB)^T - r (XB) Ybar^T + r (XB)(XB)^T`.
pub fn residual_gram(obs: &RepeatedObservations, x: &DesignMatrix, beta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_shapes(obs, x, beta)?;
    let xb = fitted(x, beta);
    Ok(residual_gram_from_fit(obs, &xb))
}

pub(crate) fn residual_gram_from_fit(obs: &RepeatedObservations, xb: &DMatrix<f64>) -> DMatrix<f64> {
    let r = obs.r() as f64;
    let mut gram = obs.cov_y().clone();
    let cross = obs.mean() * xb.transpose();
    gram -= &cross;
    gram -= cross.transpose();
    gram.gemm(1.0, xb, &xb.transpose(), 1.0);
    gram *= r;
    symmetrize_in_place(&mut gram);
    gram
}

/// Smooth part `f(B, S) = sum_l ||Y(l) - XB||^2_{S^-1} / (2nqr) + Tr(S) / (2n)`.
pub fn datafit_clar(obs: &RepeatedObservations, x: &DesignMatrix, beta: &DMatrix<f64>, s: &CoStdMatrix) -> Result<f64> {
    check_shapes(obs, x, beta)?;
    if s.dim() != obs.n() {
        return invalid(format!("noise matrix is {0}x{0}, expected {1}x{1}", s.dim(), obs.n()));
    }
    let gram = residual_gram(obs, x, beta)?;
    Ok(datafit_from_gram(obs, &gram, s))
}

pub(crate) fn datafit_from_gram(obs: &RepeatedObservations, gram: &DMatrix<f64>, s: &CoStdMatrix) -> f64 {
    let (n, q, r) = (obs.n() as f64, obs.q() as f64, obs.r() as f64);
    s.inverse().dot(gram) / (2.0 * n * q * r) + s.trace() / (2.0 * n)
}

/// Concomitant objective `f(B, S) + lambda ||B||_{2,1}`.
pub fn objective_clar(
    obs: &RepeatedObservations,
    x: &DesignMatrix,
    beta: &DMatrix<f64>,
    s: &CoStdMatrix,
    lambda: f64,
) -> Result<f64> {
    Ok(datafit_clar(obs, x, beta, s)? + lambda * l21_norm(beta))
}

/// Gradient of `f` with respect to `B`: `-X^T S^-1 (Ybar - XB) / (nq)`.
pub fn datafit_gradient(
    obs: &RepeatedObservations,
    x: &DesignMatrix,
    beta: &DMatrix<f64>,
    s: &CoStdMatrix,
) -> Result<DMatrix<f64>> {
    check_shapes(obs, x, beta)?;
    let residual = obs.mean() - x.matrix() * beta;
    let scale = -1.0 / (obs.n() * obs.q()) as f64;
    Ok(x.matrix().transpose() * (s.inverse() * residual) * scale)
}

/// Signal-to-noise ratio `||X B*|| / (sqrt(r) ||X B* - Ybar||)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Finite(f64),
    /// The mean observation equals the signal exactly.
    Infinite,
}

impl Snr {
    pub fn value(self) -> f64 {
        match self {
            Snr::Finite(v) => v,
            Snr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Snr::Infinite)
    }
}

pub fn snr(x: &DesignMatrix, beta_star: &DMatrix<f64>, obs: &RepeatedObservations) -> Result<Snr> {
    check_shapes(obs, x, beta_star)?;
    let signal = x.matrix() * beta_star;
    let noise = (&signal - obs.mean()).norm();
    if noise == 0.0 {
        return Ok(Snr::Infinite);
    }
    Ok(Snr::Finite(signal.norm() / ((obs.r() as f64).sqrt() * noise)))
}

/// Divides every row of `X` and of each `Y(l)` by the row norm of `X`, then
/// normalizes the columns of `X`.
pub fn preprocess_rescale(
    x: &DesignMatrix,
    obs: &RepeatedObservations,
) -> Result<(DesignMatrix, RepeatedObservations)> {
    if x.n() != obs.n() {
        return invalid(format!("design has {} rows but observations have {}", x.n(), obs.n()));
    }
    let mut xm = x.matrix().clone();
    let mut reps: Vec<DMatrix<f64>> = obs.repetitions().to_vec();
    for i in 0..x.n() {
        let norm = xm.row(i).norm();
        if norm == 0.0 {
            return Err(ClarError::DegenerateDesign(format!("row {i} of the design is zero")));
        }
        xm.row_mut(i).unscale_mut(norm);
        for rep in reps.iter_mut() {
            rep.row_mut(i).unscale_mut(norm);
        }
    }
    for j in 0..x.p() {
        let norm = xm.column(j).norm();
        if norm == 0.0 {
            return Err(ClarError::DegenerateDesign(format!("column {j} of the design is zero")));
        }
        xm.column_mut(j).unscale_mut(norm);
    }
    Ok((DesignMatrix::new(xm)?, RepeatedObservations::new(reps)?))
}
