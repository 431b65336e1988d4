//! Synthetic instances with Toeplitz-correlated features and noise, and a Monte
//! Carlo comparison of the repetition-aware and averaged noise covariance estimators.
//!
//! Random streams: every instance seeds one ChaCha20 generator per purpose from
//! `seed`, selecting stream 1 for the design, 2 for the coefficients and `3 + l`
//! for the noise of repetition `l`. Trial `k` of the covariance study uses stream `k`.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, ClarError, Result};
use crate::model::{snr, Coefficients, DesignMatrix, RepeatedObservations};
use crate::spectral::sym_eig;

const DESIGN_STREAM: u64 = 1;
const COEF_STREAM: u64 = 2;
const NOISE_STREAM_BASE: u64 = 3;
const TRIALS_PER_CHUNK: usize = 128;

/// Correlation matrix with entries `rho^|i-j|`.
pub fn toeplitz_corr(dim: usize, rho: f64) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return invalid(format!("Toeplitz correlation must lie in [0, 1), got {rho}"));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rho.powi(i.abs_diff(j) as i32)))
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    // Filled row by row so the draw order does not depend on the storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub rho_x: f64,
    pub rho_s: f64,
    pub n_nonzero_rows: usize,
    /// `f64::INFINITY` requests noiseless observations.
    pub target_snr: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { n: 150, p: 500, q: 100, r: 20, rho_x: 0.6, rho_s: 0.4, n_nonzero_rows: 30, target_snr: 0.03, seed: 0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let config_err = |msg: String| Err(ClarError::Config(msg));
        if self.n == 0 || self.p == 0 || self.q == 0 || self.r == 0 {
            return config_err("n, p, q and r must all be positive".into());
        }
        if !(0.0..1.0).contains(&self.rho_x) || !(0.0..1.0).contains(&self.rho_s) {
            return config_err(format!("correlations must lie in [0, 1), got {} and {}", self.rho_x, self.rho_s));
        }
        if self.n_nonzero_rows == 0 || self.n_nonzero_rows > self.p {
            return config_err(format!("n_nonzero_rows must lie in 1..={}, got {}", self.p, self.n_nonzero_rows));
        }
        if self.target_snr.is_nan() || self.target_snr <= 0.0 {
            return config_err(format!("target SNR must be positive, got {}", self.target_snr));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimInstance {
    pub x: DesignMatrix,
    pub beta_star: Coefficients,
    /// Co-standard deviation `S*`; zero for noiseless instances.
    pub s_star: DMatrix<f64>,
    pub obs: RepeatedObservations,
    pub achieved_snr: f64,
}

/// Draws `Y(l) = X B* + S* E(l)` with `S*` a scaled Toeplitz matrix whose scale
/// makes the realized SNR equal to the target.
pub fn generate(config: &SimConfig) -> Result<SimInstance> {
    config.validate()?;
    let &SimConfig { n, p, q, r, .. } = config;

    let mut rng = stream(config.seed, DESIGN_STREAM);
    let gauss = gaussian(n, p, &mut rng);
    let root = sym_eig(&toeplitz_corr(p, config.rho_x)?)?.map_values(|v| v.max(0.0).sqrt());
    let mut x = gauss * root;
    for mut col in x.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(ClarError::DegenerateDesign("generated design has a zero column".into()));
        }
        col.unscale_mut(norm);
    }
    let x = DesignMatrix::new(x)?;

    let mut rng = stream(config.seed, COEF_STREAM);
    let mut rows = sample(&mut rng, p, config.n_nonzero_rows).into_vec();
    rows.sort_unstable();
    let mut beta = DMatrix::zeros(p, q);
    for &j in &rows {
        for k in 0..q {
            beta[(j, k)] = StandardNormal.sample(&mut rng);
        }
    }
    let signal = x.matrix() * &beta;
    let signal_norm = signal.norm();

    let base = toeplitz_corr(n, config.rho_s)?;
    let shaped: Vec<DMatrix<f64>> =
        (0..r).map(|l| &base * gaussian(n, q, &mut stream(config.seed, NOISE_STREAM_BASE + l as u64))).collect();
    let scale = if config.target_snr.is_infinite() {
        0.0
    } else {
        if signal_norm == 0.0 {
            return Err(ClarError::Config("finite SNR target is unreachable with a zero signal".into()));
        }
        let mean_noise = shaped.iter().fold(DMatrix::zeros(n, q), |acc, e| acc + e) / r as f64;
        let noise_norm = mean_noise.norm();
        if noise_norm == 0.0 {
            return Err(ClarError::Config("realized noise vanished; SNR target is unreachable".into()));
        }
        signal_norm / ((r as f64).sqrt() * config.target_snr * noise_norm)
    };
    let reps: Vec<DMatrix<f64>> = shaped.into_iter().map(|e| &signal + e * scale).collect();
    let obs = RepeatedObservations::new(reps)?;
    let achieved_snr = if scale == 0.0 { f64::INFINITY } else { snr(&x, &beta, &obs)?.value() };
    Ok(SimInstance { x, beta_star: Coefficients::from_matrix(beta), s_star: base * scale, obs, achieved_snr })
}

/// Monte Carlo summary of the two noise covariance estimators at the true coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceStudy {
    /// `||mean(Sigma_clar) - Sigma*|| / ||Sigma*||`.
    pub mean_bias_clar: f64,
    pub mean_bias_sgcl: f64,
    /// Median over upper-triangular entries of `var(Sigma_sgcl_ij) / var(Sigma_clar_ij)`.
    pub variance_ratio: f64,
}

#[derive(Clone)]
struct Moments {
    sum_clar: DMatrix<f64>,
    sq_clar: DMatrix<f64>,
    sum_sgcl: DMatrix<f64>,
    sq_sgcl: DMatrix<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        let z = DMatrix::zeros(n, n);
        Self { sum_clar: z.clone(), sq_clar: z.clone(), sum_sgcl: z.clone(), sq_sgcl: z }
    }

    fn merge(mut self, other: &Moments) -> Self {
        self.sum_clar += &other.sum_clar;
        self.sq_clar += &other.sq_clar;
        self.sum_sgcl += &other.sum_sgcl;
        self.sq_sgcl += &other.sq_sgcl;
        self
    }
}

/// Draws `n_trials` noise realizations `S* E(l)` and compares
/// `Sigma_clar = sum_l R(l) R(l)^T / (qr)` with `Sigma_sgcl = (sum_l R(l))(sum_l R(l))^T / (qr)`.
pub fn covariance_study(
    n: usize,
    q: usize,
    r: usize,
    s_star: &DMatrix<f64>,
    n_trials: usize,
    seed: u64,
) -> Result<CovarianceStudy> {
    if n == 0 || q == 0 || r == 0 {
        return invalid("n, q and r must be positive");
    }
    if s_star.shape() != (n, n) {
        return invalid(format!("S* must be {n}x{n}"));
    }
    if n_trials < 2 {
        return invalid("at least two trials are needed to estimate variances");
    }
    let sigma_star = s_star * s_star.transpose();
    let norm_star = sigma_star.norm();
    if norm_star == 0.0 {
        return invalid("S* must be nonzero");
    }
    let scale = 1.0 / (q * r) as f64;
    let chunks: Vec<Moments> = (0..n_trials.div_ceil(TRIALS_PER_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Moments::zeros(n);
            for k in c * TRIALS_PER_CHUNK..((c + 1) * TRIALS_PER_CHUNK).min(n_trials) {
                let mut rng = stream(seed, k as u64);
                let mut clar = DMatrix::zeros(n, n);
                let mut total = DMatrix::zeros(n, q);
                for _ in 0..r {
                    let noise = s_star * gaussian(n, q, &mut rng);
                    clar.gemm(scale, &noise, &noise.transpose(), 1.0);
                    total += noise;
                }
                let sgcl = &total * total.transpose() * scale;
                acc.sq_clar += clar.component_mul(&clar);
                acc.sq_sgcl += sgcl.component_mul(&sgcl);
                acc.sum_clar += clar;
                acc.sum_sgcl += sgcl;
            }
            acc
        })
        .collect();
    let totals = chunks.iter().fold(Moments::zeros(n), Moments::merge);

    let trials = n_trials as f64;
    let mean_clar = &totals.sum_clar / trials;
    let mean_sgcl = &totals.sum_sgcl / trials;
    let variance = |sum: f64, sq: f64| (sq - sum * sum / trials) / (trials - 1.0);
    let mut ratios = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let v_clar = variance(totals.sum_clar[(i, j)], totals.sq_clar[(i, j)]);
            let v_sgcl = variance(totals.sum_sgcl[(i, j)], totals.sq_sgcl[(i, j)]);
            if v_clar > 0.0 {
                ratios.push(v_sgcl / v_clar);
            }
        }
    }
    if ratios.is_empty() {
        return Err(ClarError::NumericalFailure("all covariance entries have zero variance".into()));
    }
    Ok(CovarianceStudy {
        mean_bias_clar: (mean_clar - &sigma_star).norm() / norm_star,
        mean_bias_sgcl: (mean_sgcl - &sigma_star).norm() / norm_star,
        variance_ratio: median(&mut ratios),
    })
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}
