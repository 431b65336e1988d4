//! Support-recovery benchmarks along geometric regularization paths.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, ClarError, Result};
use crate::model::{default_sigma_min, Coefficients, SolverConfig};
use crate::simulate::{generate, median, SimConfig, SimInstance};
use crate::solvers::{lambda_max, solve_with, EstimatorKind, SolveOptions};

/// True and false positive rates of an estimated row support.
pub fn support_metrics(estimated: &Coefficients, truth: &Coefficients) -> Result<(f64, f64)> {
    if estimated.p() != truth.p() {
        return invalid(format!("estimate has {} rows but the truth has {}", estimated.p(), truth.p()));
    }
    let est = estimated.support();
    let star = truth.support();
    let true_pos = est.intersection(star).count();
    let false_pos = est.len() - true_pos;
    let tpr = if star.is_empty() {
        if !est.is_empty() {
            return invalid("true support is empty but the estimate selected rows");
        }
        1.0
    } else {
        true_pos as f64 / star.len() as f64
    };
    let negatives = truth.p() - star.len();
    let fpr = if negatives == 0 { 0.0 } else { false_pos as f64 / negatives as f64 };
    Ok((tpr, fpr))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub lambda: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points ordered by decreasing `lambda`, with the trapezoidal AUC over the
/// observed FPR range divided by the width of that range.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    points: Vec<RocPoint>,
    auc: f64,
}

impl RocCurve {
    pub fn new(mut points: Vec<RocPoint>) -> Result<Self> {
        if points.is_empty() {
            return invalid("an ROC curve needs at least one point");
        }
        if points.iter().any(|pt| !(0.0..=1.0).contains(&pt.fpr) || !(0.0..=1.0).contains(&pt.tpr)) {
            return invalid("rates must lie in [0, 1]");
        }
        points.sort_by(|a, b| b.lambda.total_cmp(&a.lambda));
        if points.windows(2).any(|w| w[0].lambda == w[1].lambda) {
            return invalid("ROC points must have distinct lambdas");
        }
        let mut curve = Self { points, auc: 0.0 };
        let (lo, hi) = curve.fpr_range();
        curve.auc = if hi > lo {
            curve.integrate(lo, hi) / (hi - lo)
        } else {
            curve.points.iter().map(|pt| pt.tpr).fold(0.0, f64::max)
        };
        Ok(curve)
    }

    pub fn points(&self) -> &[RocPoint] {
        &self.points
    }

    pub fn auc(&self) -> f64 {
        self.auc
    }

    pub fn fpr_range(&self) -> (f64, f64) {
        let lo = self.points.iter().map(|pt| pt.fpr).fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().map(|pt| pt.fpr).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Normalized area over `[0, limit]`; the curve is held flat left of its first point.
    pub fn partial_auc(&self, limit: f64) -> f64 {
        if limit <= 0.0 {
            return self.tpr_at_zero();
        }
        self.integrate(0.0, limit) / limit
    }

    fn tpr_at_zero(&self) -> f64 {
        let sorted = self.sorted_by_fpr();
        sorted.iter().take_while(|pt| pt.0 <= sorted[0].0).map(|pt| pt.1).fold(0.0, f64::max)
    }

    fn sorted_by_fpr(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self.points.iter().map(|pt| (pt.fpr, pt.tpr)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pts
    }

    /// Trapezoidal integral of the piecewise-linear curve on `[lo, hi]`, extended
    /// by constants beyond the observed range.
    fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let mut pts = self.sorted_by_fpr();
        let first = pts[0];
        let last = pts[pts.len() - 1];
        if lo < first.0 {
            pts.insert(0, (lo, first.1));
        }
        if hi > last.0 {
            pts.push((hi, last.1));
        }
        let mut area = 0.0;
        for w in pts.windows(2) {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            let a = x0.max(lo);
            let b = x1.min(hi);
            if b <= a || x1 <= x0 {
                continue;
            }
            let interp = |x: f64| y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            area += 0.5 * (interp(a) + interp(b)) * (b - a);
        }
        area
    }
}

/// Largest FPR covered by every curve.
pub fn common_fpr_limit<'a>(curves: impl IntoIterator<Item = &'a RocCurve>) -> f64 {
    curves.into_iter().map(|c| c.fpr_range().1).fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMinRule {
    /// `lambda_min = ratio * lambda_max`.
    Ratio(f64),
    /// Walk the `1e-3` path and stop at the first point whose FPR reaches the target.
    TargetFpr(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n_points: usize,
    /// Overrides the estimator-specific critical level when set.
    pub lambda_max: Option<f64>,
    pub lambda_min_rule: LambdaMinRule,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n_points: 160, lambda_max: None, lambda_min_rule: LambdaMinRule::Ratio(1e-3) }
    }
}

impl GridSpec {
    pub const DEFAULT_RATIO: f64 = 1e-3;

    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(ClarError::Config("a grid needs at least two points".into()));
        }
        match self.lambda_min_rule {
            LambdaMinRule::Ratio(ratio) if !(ratio > 0.0 && ratio < 1.0) => {
                Err(ClarError::Config(format!("lambda ratio must lie in (0, 1), got {ratio}")))
            }
            LambdaMinRule::TargetFpr(fpr) if !(fpr > 0.0 && fpr <= 1.0) => {
                Err(ClarError::Config(format!("target FPR must lie in (0, 1], got {fpr}")))
            }
            _ => Ok(()),
        }
    }

    /// Geometric grid from `lambda_max` down to `lambda_min`.
    pub fn lambdas(&self, lambda_max: f64) -> Vec<f64> {
        let ratio = match self.lambda_min_rule {
            LambdaMinRule::Ratio(ratio) => ratio,
            LambdaMinRule::TargetFpr(_) => Self::DEFAULT_RATIO,
        };
        let last = (self.n_points - 1) as f64;
        (0..self.n_points).map(|k| lambda_max * ratio.powf(k as f64 / last)).collect()
    }
}

/// Solver settings shared by every point of a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    /// Defaults to `||Ybar|| / (1000 n q)` of each instance.
    pub sigma_min: Option<f64>,
    pub gap_tol: f64,
    pub max_iters: usize,
    pub s_update_freq: usize,
    pub warm_start: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigma_min: None,
            gap_tol: SolverConfig::DEFAULT_GAP_TOL,
            max_iters: SolverConfig::DEFAULT_MAX_ITERS,
            s_update_freq: SolverConfig::DEFAULT_S_UPDATE_FREQ,
            warm_start: true,
        }
    }
}

impl SweepConfig {
    pub fn solver_config(&self, instance: &SimInstance, lambda: f64) -> SolverConfig {
        let sigma_min = self.sigma_min.unwrap_or_else(|| default_sigma_min(&instance.obs));
        SolverConfig::new(lambda, sigma_min)
            .with_gap_tol(self.gap_tol)
            .with_max_iters(self.max_iters)
            .with_s_update_freq(self.s_update_freq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointFailure {
    pub lambda: f64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RocSweep {
    pub estimator: EstimatorKind,
    pub curve: RocCurve,
    /// Final objective at each successful point, in curve order.
    pub objectives: Vec<f64>,
    pub failures: Vec<PointFailure>,
    /// Points that hit the sweep cap before meeting the stopping rule.
    pub unconverged: usize,
    pub wall_time: Duration,
}

/// Solves along the grid from the largest `lambda` down, warm-starting each point
/// from the previous solution. Failed points are recorded and skipped.
pub fn roc_sweep(
    instance: &SimInstance,
    estimator: EstimatorKind,
    grid: &GridSpec,
    config: &SweepConfig,
) -> Result<RocSweep> {
    grid.validate()?;
    let start = Instant::now();
    let base = config.solver_config(instance, 1.0);
    let lmax = match grid.lambda_max {
        Some(l) => l,
        None => lambda_max(estimator, &instance.obs, &instance.x, base.sigma_min)?,
    };
    if !(lmax.is_finite() && lmax > 0.0) {
        return Err(ClarError::InvalidInput(format!("{estimator}: critical lambda is {lmax}, nothing to sweep")));
    }
    let mut points = Vec::with_capacity(grid.n_points);
    let mut objectives = Vec::with_capacity(grid.n_points);
    let mut failures = Vec::new();
    let mut unconverged = 0;
    let mut previous: Option<DMatrix<f64>> = None;
    for lambda in grid.lambdas(lmax) {
        let opts = SolveOptions {
            warm_start: if config.warm_start { previous.as_ref() } else { None },
            record_iterates: false,
        };
        match solve_with(estimator, &instance.obs, &instance.x, &base.with_lambda(lambda), &opts) {
            Ok(res) => {
                let (tpr, fpr) = support_metrics(&res.beta, &instance.beta_star)?;
                if !res.converged {
                    unconverged += 1;
                }
                points.push(RocPoint { lambda, fpr, tpr });
                objectives.push(res.final_objective().unwrap_or(f64::NAN));
                previous = Some(res.beta.into_matrix());
                if let LambdaMinRule::TargetFpr(target) = grid.lambda_min_rule {
                    if fpr >= target {
                        break;
                    }
                }
            }
            Err(err) => {
                warn!("{estimator} failed at lambda={lambda:e}: {err}");
                failures.push(PointFailure { lambda, message: err.to_string() });
            }
        }
    }
    if points.is_empty() {
        return Err(ClarError::NumericalFailure(format!("{estimator}: every grid point failed")));
    }
    Ok(RocSweep {
        estimator,
        curve: RocCurve::new(points)?,
        objectives,
        failures,
        unconverged,
        wall_time: start.elapsed(),
    })
}

/// All requested estimators on one instance, with AUCs on their common FPR range.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub sweeps: Vec<(EstimatorKind, Result<RocSweep>)>,
    pub common_fpr: f64,
}

impl Comparison {
    pub fn sweep(&self, kind: EstimatorKind) -> Option<&RocSweep> {
        self.sweeps.iter().find(|(k, _)| *k == kind).and_then(|(_, s)| s.as_ref().ok())
    }

    /// AUC restricted to the FPR range covered by every successful estimator.
    pub fn common_auc(&self, kind: EstimatorKind) -> Option<f64> {
        self.sweep(kind).map(|s| s.curve.partial_auc(self.common_fpr))
    }
}

pub fn compare_estimators(
    instance: &SimInstance,
    estimators: &[EstimatorKind],
    grid: &GridSpec,
    config: &SweepConfig,
) -> Comparison {
    let sweeps: Vec<(EstimatorKind, Result<RocSweep>)> =
        estimators.par_iter().map(|&kind| (kind, roc_sweep(instance, kind, grid, config))).collect();
    let common_fpr = common_fpr_limit(sweeps.iter().filter_map(|(_, s)| s.as_ref().ok()).map(|s| &s.curve));
    Comparison { sweeps, common_fpr }
}

/// One comparison per seed on freshly generated instances.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub runs: Vec<(u64, Comparison)>,
}

impl BenchReport {
    /// Median over seeds of the common-range AUC.
    pub fn median_auc(&self, kind: EstimatorKind) -> Option<f64> {
        let mut values: Vec<f64> = self.runs.iter().filter_map(|(_, c)| c.common_auc(kind)).collect();
        (!values.is_empty()).then(|| median(&mut values))
    }

    /// Median over seeds of `|AUC(a) - AUC(b)|` on each seed's common range.
    pub fn median_abs_difference(&self, a: EstimatorKind, b: EstimatorKind) -> Option<f64> {
        let mut values: Vec<f64> =
            self.runs.iter().filter_map(|(_, c)| Some((c.common_auc(a)? - c.common_auc(b)?).abs())).collect();
        (!values.is_empty()).then(|| median(&mut values))
    }

    /// Total wall time per estimator summed over seeds.
    pub fn timings(&self) -> BTreeMap<&'static str, Duration> {
        let mut out = BTreeMap::new();
        for (_, comparison) in &self.runs {
            for (kind, sweep) in &comparison.sweeps {
                if let Ok(s) = sweep {
                    *out.entry(kind.name()).or_insert(Duration::ZERO) += s.wall_time;
                }
            }
        }
        out
    }
}

/// Runs `compare_estimators` on the instances generated with seeds `sim.seed + k`, `k < n_seeds`.
pub fn run_benchmark(
    sim: &SimConfig,
    n_seeds: usize,
    estimators: &[EstimatorKind],
    grid: &GridSpec,
    config: &SweepConfig,
) -> Result<BenchReport> {
    if n_seeds == 0 {
        return Err(ClarError::Config("at least one seed is required".into()));
    }
    sim.validate()?;
    grid.validate()?;
    let runs: Result<Vec<(u64, Comparison)>> = (0..n_seeds as u64)
        .into_par_iter()
        .map(|k| {
            let seed = sim.seed.wrapping_add(k);
            let instance = generate(&SimConfig { seed, ..*sim })?;
            let comparison = compare_estimators(&instance, estimators, grid, config);
            info!("seed {seed}: common FPR range [0, {:.3}]", comparison.common_fpr);
            Ok((seed, comparison))
        })
        .collect();
    Ok(BenchReport { runs: runs? })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coefs(p: usize, rows: &[usize]) -> Coefficients {
        let mut m = DMatrix::zeros(p, 2);
        for &j in rows {
            m[(j, 0)] = 1.0;
        }
        Coefficients::from_matrix(m)
    }

    #[test]
    fn metrics_examples() {
        let truth = coefs(5, &[0, 1]);
        assert_eq!(support_metrics(&truth, &truth).unwrap(), (1.0, 0.0));
        assert_eq!(support_metrics(&coefs(5, &[]), &truth).unwrap(), (0.0, 0.0));
        assert_eq!(support_metrics(&coefs(5, &[2, 3, 4]), &truth).unwrap(), (0.0, 1.0));
        assert!(support_metrics(&coefs(4, &[]), &truth).is_err());
        assert_eq!(support_metrics(&coefs(5, &[]), &coefs(5, &[])).unwrap(), (1.0, 0.0));
        assert!(support_metrics(&coefs(5, &[1]), &coefs(5, &[])).is_err());
    }

    #[test]
    fn auc_of_simple_curves() {
        let pts = vec![
            RocPoint { lambda: 3.0, fpr: 0.0, tpr: 0.0 },
            RocPoint { lambda: 2.0, fpr: 0.0, tpr: 1.0 },
            RocPoint { lambda: 1.0, fpr: 0.5, tpr: 1.0 },
        ];
        let curve = RocCurve::new(pts).unwrap();
        assert!((curve.auc() - 1.0).abs() < 1e-15);

        let diag = RocCurve::new(vec![
            RocPoint { lambda: 2.0, fpr: 0.0, tpr: 0.0 },
            RocPoint { lambda: 1.0, fpr: 0.4, tpr: 0.4 },
        ])
        .unwrap();
        assert!((diag.auc() - 0.2).abs() < 1e-15);
        assert!((diag.partial_auc(0.2) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn auc_ignores_input_order() {
        let mut pts = vec![
            RocPoint { lambda: 1.0, fpr: 0.3, tpr: 0.9 },
            RocPoint { lambda: 4.0, fpr: 0.0, tpr: 0.0 },
            RocPoint { lambda: 2.0, fpr: 0.1, tpr: 0.7 },
            RocPoint { lambda: 3.0, fpr: 0.05, tpr: 0.2 },
        ];
        let a = RocCurve::new(pts.clone()).unwrap();
        pts.reverse();
        let b = RocCurve::new(pts).unwrap();
        assert_eq!(a, b);
        assert!(a.points().windows(2).all(|w| w[0].lambda > w[1].lambda));
    }

    #[test]
    fn grid_is_geometric() {
        let grid = GridSpec { n_points: 4, lambda_max: None, lambda_min_rule: LambdaMinRule::Ratio(1e-3) };
        let l = grid.lambdas(2.0);
        assert_eq!(l.len(), 4);
        assert_eq!(l[0], 2.0);
        assert!((l[3] - 2e-3).abs() < 1e-15);
        assert!((l[1] / l[0] - l[2] / l[1]).abs() < 1e-12);
        assert!(GridSpec { n_points: 1, ..grid }.validate().is_err());
    }
}
