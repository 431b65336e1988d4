//! Spectral primitives: symmetric eigendecomposition and SVD with a sorted,
//! deterministic contract, the clipped square root used by the noise updates,
//! Schatten-ball projections and the closed forms of the smoothed Schatten norms.
//!
//! Eigenvalues and singular values are always returned in descending order.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, ClarError, Result};
use crate::model::CoStdMatrix;

/// Relative off-diagonal deflation threshold handed to the eigen and SVD solvers.
pub const EIG_TOL: f64 = 1e-12;

/// Negative eigenvalues down to `-PSD_SLACK * ||A||_2` are treated as rounding noise.
pub const PSD_SLACK: f64 = 1e-8;

/// `A = U diag(values) U^T` with `values` sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub basis: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `U diag(f(values)) U^T`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.basis.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[j]);
        }
        let mut out = scaled * self.basis.transpose();
        symmetrize_in_place(&mut out);
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map_values(|v| v)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Thin SVD `Z = V diag(values) W^T` with `k = min(n, q)` descending singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularDecomposition {
    pub left: DMatrix<f64>,
    pub values: DVector<f64>,
    pub right: DMatrix<f64>,
}

impl SingularDecomposition {
    /// `V diag(f(values)) W^T`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.left.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[j]);
        }
        scaled * self.right.transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map_values(|v| v)
    }
}

/// Quality of a smoothed norm against the exact norm it approximates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingReport {
    pub smoothed_value: f64,
    pub exact_norm: f64,
    /// `smoothed_value - exact_norm`.
    pub error: f64,
    /// Theoretical cap on `error`.
    pub bound: f64,
}

pub(crate) fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        invalid(format!("{what} contains non-finite entries"))
    }
}

fn check_positive(value: f64, what: &str) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        invalid(format!("{what} must be positive and finite, got {value}"))
    }
}

/// Symmetric eigendecomposition of `(A + A^T) / 2`.
pub fn sym_eig(a: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    if !a.is_square() {
        return invalid(format!("sym_eig expects a square matrix, got {}x{}", a.nrows(), a.ncols()));
    }
    check_finite(a, "sym_eig input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(SpectralDecomposition { basis: DMatrix::zeros(0, 0), values: DVector::zeros(0) });
    }
    let mut sym = a.clone();
    symmetrize_in_place(&mut sym);
    let max_iter = 200 * n.max(10);
    let eig = nalgebra::SymmetricEigen::try_new(sym, EIG_TOL, max_iter).ok_or_else(|| {
        ClarError::NumericalFailure(format!("symmetric eigensolver did not converge on a {n}x{n} matrix"))
    })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let basis = DMatrix::from_fn(n, n, |row, col| eig.eigenvectors[(row, order[col])]);
    Ok(SpectralDecomposition { basis, values })
}

/// Thin singular value decomposition with descending singular values.
pub fn svd(z: &DMatrix<f64>) -> Result<SingularDecomposition> {
    check_finite(z, "svd input")?;
    let (n, q) = z.shape();
    let k = n.min(q);
    if k == 0 {
        return Ok(SingularDecomposition {
            left: DMatrix::zeros(n, 0),
            values: DVector::zeros(0),
            right: DMatrix::zeros(q, 0),
        });
    }
    let max_iter = 200 * n.max(q).max(10);
    let dec = nalgebra::SVD::try_new(z.clone(), true, true, EIG_TOL, max_iter)
        .ok_or_else(|| ClarError::NumericalFailure(format!("SVD did not converge on a {n}x{q} matrix")))?;
    let u = dec.u.as_ref().expect("left vectors requested");
    let v_t = dec.v_t.as_ref().expect("right vectors requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| dec.singular_values[j].total_cmp(&dec.singular_values[i]).then(i.cmp(&j)));
    let values = DVector::from_iterator(k, order.iter().map(|&i| dec.singular_values[i].max(0.0)));
    let left = DMatrix::from_fn(n, k, |row, col| u[(row, order[col])]);
    let right = DMatrix::from_fn(q, k, |row, col| v_t[(order[col], row)]);
    Ok(SingularDecomposition { left, values, right })
}

pub fn singular_values(z: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(svd(z)?.values.iter().copied().collect())
}

pub fn nuclear_norm(z: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(z)?.iter().sum())
}

pub fn spectral_norm(z: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(z)?.first().copied().unwrap_or(0.0))
}

/// Decomposes a PSD input, clamping rounding-level negative eigenvalues to zero.
fn psd_decomposition(sigma: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    let mut dec = sym_eig(sigma)?;
    let scale = dec.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    for v in dec.values.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_SLACK * scale.max(f64::MIN_POSITIVE) {
                return invalid(format!("matrix is not positive semidefinite (eigenvalue {v:e})"));
            }
            *v = 0.0;
        }
    }
    Ok(dec)
}

/// Clipped square root: `U diag(sqrt(g_i) v sigma_min) U^T`.
pub fn spcl(sigma: &DMatrix<f64>, sigma_min: f64) -> Result<CoStdMatrix> {
    check_positive(sigma_min, "sigma_min")?;
    let dec = psd_decomposition(sigma)?;
    let values = dec.values.map(|g| g.sqrt().max(sigma_min));
    CoStdMatrix::from_spectrum(dec.basis, values)
}

/// [`spcl`] for matrices that are PSD by construction, such as residual Gram
/// matrices: negative eigenvalues can only come from cancellation and are clamped.
pub(crate) fn spcl_gram(gram: &DMatrix<f64>, sigma_min: f64) -> Result<CoStdMatrix> {
    check_positive(sigma_min, "sigma_min")?;
    let dec = sym_eig(gram)?;
    let values = dec.values.map(|g| g.max(0.0).sqrt().max(sigma_min));
    CoStdMatrix::from_spectrum(dec.basis, values)
}

/// [`cl_spd`] for matrices that are PSD by construction.
pub(crate) fn cl_gram(gram: &DMatrix<f64>, floor: f64) -> Result<CoStdMatrix> {
    check_positive(floor, "clipping floor")?;
    let dec = sym_eig(gram)?;
    let values = dec.values.map(|g| g.max(floor));
    CoStdMatrix::from_spectrum(dec.basis, values)
}

/// Eigenvalue clipping `U diag(g_i v floor) U^T`, returned with its cached inverse.
pub fn cl_spd(sigma: &DMatrix<f64>, floor: f64) -> Result<CoStdMatrix> {
    check_positive(floor, "clipping floor")?;
    let dec = psd_decomposition(sigma)?;
    let values = dec.values.map(|g| g.max(floor));
    CoStdMatrix::from_spectrum(dec.basis, values)
}

/// Eigenvalue clipping `U diag(g_i v floor) U^T`.
pub fn cl(sigma: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    Ok(cl_spd(sigma, floor)?.matrix().clone())
}

/// Euclidean projection onto the unit spectral-norm ball.
pub fn proj_schatten_inf_ball(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dec = svd(z)?;
    if dec.values.iter().all(|&g| g <= 1.0) {
        return Ok(z.clone());
    }
    Ok(dec.map_values(|g| g.min(1.0)))
}

/// Euclidean projection onto the unit Frobenius ball.
pub fn proj_schatten_2_ball(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(z, "projection input")?;
    let norm = z.norm();
    if norm <= 1.0 {
        Ok(z.clone())
    } else {
        Ok(z / norm)
    }
}

/// Threshold `nu >= 0` solving `sum_i (values_i - nu)_+ = 1` for nonnegative `values`.
///
/// Returns 0 when the values already lie in the unit l1 ball. The map
/// `nu -> sum_i (values_i - nu)_+` is piecewise linear with breakpoints at the
/// values, so the root is found by one sorted scan.
pub fn l1_ball_threshold(values: &[f64]) -> f64 {
    let total: f64 = values.iter().sum();
    if total <= 1.0 {
        return 0.0;
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut nu = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if v > candidate {
            nu = candidate;
        } else {
            break;
        }
    }
    nu.max(0.0)
}

/// Euclidean projection onto the unit nuclear-norm ball, with its shrinkage level `nu`.
pub fn proj_schatten_1_ball(z: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let dec = svd(z)?;
    let values: Vec<f64> = dec.values.iter().copied().collect();
    if values.iter().sum::<f64>() <= 1.0 {
        return Ok((z.clone(), 0.0));
    }
    let nu = l1_ball_threshold(&values);
    Ok((dec.map_values(|g| (g - nu).max(0.0)), nu))
}

/// `min_{S >= sigma_min I} 1/2 ||Z||^2_{S^-1} + 1/2 Tr(S)` in closed form.
pub fn smoothed_schatten1(z: &DMatrix<f64>, sigma_min: f64) -> Result<f64> {
    check_positive(sigma_min, "sigma_min")?;
    let n = z.nrows() as f64;
    let gammas = singular_values(z)?;
    let mut value = 0.5 * n * sigma_min;
    for g in gammas {
        if g <= sigma_min {
            value += g * g / (2.0 * sigma_min);
        } else {
            value += g - 0.5 * sigma_min;
        }
    }
    Ok(value)
}

/// Gradient `S^-1 Z` of [`smoothed_schatten1`], with `S = SpCl(Z Z^T, sigma_min)`.
pub fn smoothed_schatten1_grad(z: &DMatrix<f64>, sigma_min: f64) -> Result<DMatrix<f64>> {
    let s = spcl(&(z * z.transpose()), sigma_min)?;
    Ok(s.inverse() * z)
}

/// Frobenius-norm smoothing: Huber-like `||Z||^2/(2s) + s/2` below `s`, `||Z||` above.
pub fn smoothed_schatten2(z: &DMatrix<f64>, sigma_min: f64) -> Result<f64> {
    check_positive(sigma_min, "sigma_min")?;
    check_finite(z, "smoothing input")?;
    let norm = z.norm();
    if norm <= sigma_min {
        Ok(norm * norm / (2.0 * sigma_min) + 0.5 * sigma_min)
    } else {
        Ok(norm)
    }
}

/// Spectral-norm smoothing through the nuclear-ball projection of `Z / sigma_min`.
pub fn smoothed_schatten_inf(z: &DMatrix<f64>, sigma_min: f64) -> Result<f64> {
    check_positive(sigma_min, "sigma_min")?;
    let gammas = singular_values(z)?;
    let nuclear: f64 = gammas.iter().sum();
    if nuclear <= sigma_min {
        let fro2: f64 = gammas.iter().map(|g| g * g).sum();
        return Ok(fro2 / (2.0 * sigma_min) + 0.5 * sigma_min);
    }
    let scaled: Vec<f64> = gammas.iter().map(|g| g / sigma_min).collect();
    let nu = l1_ball_threshold(&scaled);
    let sum: f64 = scaled.iter().map(|g| (g * g - nu * nu).max(0.0)).sum();
    Ok(0.5 * sigma_min * sum + 0.5 * sigma_min)
}

/// Trace-regularized smoothing `sum_{i<=n} sqrt(g_i^2 + sigma_min^2)`, zero-padded to `n` values.
pub fn smoothed_trace_reg(z: &DMatrix<f64>, sigma_min: f64) -> Result<f64> {
    check_positive(sigma_min, "sigma_min")?;
    let n = z.nrows();
    let gammas = singular_values(z)?;
    let padding = (n - gammas.len()) as f64 * sigma_min;
    Ok(gammas.iter().map(|g| g.hypot(sigma_min)).sum::<f64>() + padding)
}

pub fn nuclear_smoothing_report(z: &DMatrix<f64>, sigma_min: f64) -> Result<SmoothingReport> {
    let smoothed_value = smoothed_schatten1(z, sigma_min)?;
    let exact_norm = nuclear_norm(z)?;
    Ok(SmoothingReport {
        smoothed_value,
        exact_norm,
        error: smoothed_value - exact_norm,
        bound: 0.5 * z.nrows() as f64 * sigma_min,
    })
}

pub fn trace_reg_smoothing_report(z: &DMatrix<f64>, sigma_min: f64) -> Result<SmoothingReport> {
    let smoothed_value = smoothed_trace_reg(z, sigma_min)?;
    let exact_norm = nuclear_norm(z)?;
    Ok(SmoothingReport {
        smoothed_value,
        exact_norm,
        error: smoothed_value - exact_norm,
        bound: z.nrows() as f64 * sigma_min,
    })
}

/// Trace-regularized smoothing error written as `sigma sum_i 1/(sqrt(1 + g_i^2/s^2) + g_i/s)`,
/// which avoids the cancellation in `sqrt(g^2 + s^2) - g`.
pub fn trace_reg_error(z: &DMatrix<f64>, sigma_min: f64) -> Result<f64> {
    check_positive(sigma_min, "sigma_min")?;
    let n = z.nrows();
    let gammas = singular_values(z)?;
    let padding = (n - gammas.len()) as f64 * sigma_min;
    let sum: f64 = gammas
        .iter()
        .map(|g| {
            let t = g / sigma_min;
            1.0 / ((1.0 + t * t).sqrt() + t)
        })
        .sum();
    Ok(sigma_min * sum + padding)
}

/// Nuclear smoothing error `sum_{g_i <= s} (g_i - s)^2 / (2 s) + (n - n^q) s / 2`.
pub fn nuclear_smoothing_error(z: &DMatrix<f64>, sigma_min: f64) -> Result<f64> {
    check_positive(sigma_min, "sigma_min")?;
    let n = z.nrows();
    let gammas = singular_values(z)?;
    let padding = 0.5 * (n - gammas.len()) as f64 * sigma_min;
    let sum: f64 =
        gammas.iter().filter(|&&g| g <= sigma_min).map(|g| (g - sigma_min).powi(2) / (2.0 * sigma_min)).sum();
    Ok(sum + padding)
}
