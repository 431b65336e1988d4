use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use clar::bench::{run_benchmark, BenchReport, GridSpec, LambdaMinRule, SweepConfig};
use clar::model::{default_sigma_min, preprocess_rescale};
use clar::simulate::{covariance_study, generate, toeplitz_corr, SimConfig};
use clar::solvers::{lambda_max, solve};
use clar::{DesignMatrix, EstimatorKind, RepeatedObservations, SolverConfig};
use log::{info, warn};

use crate::io::{read_matrix, read_repetitions, write_matrix, write_repetitions, write_table, Format};
use crate::manifest::{self, Manifest};

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    IterationCap,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one estimator at one regularization level.
    Solve(SolveArgs),
    /// Draw a synthetic instance and write it to disk.
    Simulate(SimulateArgs),
    /// Run ROC sweeps over several seeds, or the covariance Monte Carlo study.
    Bench(BenchArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn run(&self, threads: usize) -> Result<Outcome> {
        match self {
            Command::Solve(args) => cmd_solve(args, threads),
            Command::Simulate(args) => cmd_simulate(args, threads),
            Command::Bench(args) => cmd_bench(args, threads),
            Command::Replay(args) => cmd_replay(args, threads),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// One of clar, sgcl, mtl, mle, mler, mrcer.
    #[arg(long)]
    pub estimator: String,
    /// Design matrix file.
    #[arg(long)]
    pub x: PathBuf,
    /// Prefix of the repetition files `PREFIX_rep<k>`.
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long, required_unless_present = "lambda_frac", conflicts_with = "lambda_frac")]
    pub lambda: Option<f64>,
    /// Regularization as a fraction of the estimator's critical level.
    #[arg(long)]
    pub lambda_frac: Option<f64>,
    /// Defaults to `||Ybar|| / (1000 n q)`.
    #[arg(long)]
    pub sigma_min: Option<f64>,
    /// Graphical-lasso penalty, required by mrcer.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = SolverConfig::DEFAULT_GAP_TOL)]
    pub gap_tol: f64,
    #[arg(long, default_value_t = SolverConfig::DEFAULT_MAX_ITERS)]
    pub max_sweeps: usize,
    /// Coefficient sweeps between noise updates.
    #[arg(long, default_value_t = SolverConfig::DEFAULT_S_UPDATE_FREQ)]
    pub f_sigma: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Rescale rows by the design row norms and normalize the design columns.
    #[arg(long)]
    pub preprocess: bool,
}

pub fn cmd_solve(args: &SolveArgs, threads: usize) -> Result<Outcome> {
    let kind = EstimatorKind::parse(&args.estimator, args.mu)?;
    let x = DesignMatrix::new(read_matrix(&args.x)?).with_context(|| format!("design {}", args.x.display()))?;
    let obs = RepeatedObservations::new(read_repetitions(&args.y)?)
        .with_context(|| format!("observations {}", args.y.display()))?;
    let (x, obs) = if args.preprocess { preprocess_rescale(&x, &obs)? } else { (x, obs) };
    let sigma_min = args.sigma_min.unwrap_or_else(|| default_sigma_min(&obs));
    let lambda = match (args.lambda, args.lambda_frac) {
        (Some(lambda), _) => lambda,
        (None, Some(frac)) => frac * lambda_max(kind, &obs, &x, sigma_min)?,
        (None, None) => bail!("one of --lambda or --lambda-frac is required"),
    };
    let config = SolverConfig::new(lambda, sigma_min)
        .with_gap_tol(args.gap_tol)
        .with_max_iters(args.max_sweeps)
        .with_s_update_freq(args.f_sigma);
    config.validate()?;
    let result = solve(kind, &obs, &x, &config)?;
    for warning in &result.warnings {
        warn!("{warning}");
    }
    info!(
        "{kind}: {} sweeps, objective {:e}, converged {}",
        result.iterations,
        result.final_objective().unwrap_or(f64::NAN),
        result.converged
    );

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_matrix(&args.out.join("beta.csv"), result.beta.matrix(), Format::Csv)?;
    write_matrix(&args.out.join("noise.csv"), result.noise.matrix(), Format::Csv)?;
    let trace = result.objective_trace.iter().enumerate().map(|(k, obj)| match result.gap_trace.get(k) {
        Some(gap) => format!("{},{obj:.16e},{gap:.16e}", k + 1),
        None => format!("{},{obj:.16e},", k + 1),
    });
    write_table(&args.out.join("trace.csv"), "sweep,objective,gap", trace)?;

    let mut m = Manifest::new("solve");
    m.set("estimator", kind.name());
    m.set_opt("mu", args.mu);
    m.set("x", absolute(&args.x)?.display());
    m.set("y", absolute(&args.y)?.display());
    m.set("lambda", lambda);
    m.set_opt("lambda_frac", args.lambda_frac);
    m.set("sigma_min", sigma_min);
    m.set("gap_tol", args.gap_tol);
    m.set("max_sweeps", args.max_sweeps);
    m.set("f_sigma", args.f_sigma);
    m.set("preprocess", args.preprocess);
    m.set("threads", threads);
    m.set("iterations", result.iterations);
    m.set("converged", result.converged);
    m.write(&args.out.join(manifest::FILE_NAME))?;

    Ok(if result.converged { Outcome::Converged } else { Outcome::IterationCap })
}

impl SolveArgs {
    fn from_manifest(m: &Manifest, out: PathBuf) -> Result<Self> {
        Ok(Self {
            estimator: m.require("estimator")?,
            x: m.require("x")?,
            y: m.require("y")?,
            lambda: Some(m.require("lambda")?),
            lambda_frac: None,
            sigma_min: Some(m.require("sigma_min")?),
            mu: m.optional("mu")?,
            gap_tol: m.require("gap_tol")?,
            max_sweeps: m.require("max_sweeps")?,
            f_sigma: m.require("f_sigma")?,
            out,
            preprocess: m.require("preprocess")?,
        })
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    if path.is_absolute() {
        return Ok(path.to_path_buf());
    }
    Ok(std::env::current_dir()?.join(path))
}

#[derive(Debug, Clone, Args)]
pub struct SimFlags {
    #[arg(long, default_value_t = SimConfig::default().n)]
    pub n: usize,
    #[arg(long, default_value_t = SimConfig::default().p)]
    pub p: usize,
    #[arg(long, default_value_t = SimConfig::default().q)]
    pub q: usize,
    #[arg(long, default_value_t = SimConfig::default().r)]
    pub r: usize,
    #[arg(long, default_value_t = SimConfig::default().rho_x)]
    pub rho_x: f64,
    #[arg(long, default_value_t = SimConfig::default().rho_s)]
    pub rho_s: f64,
    #[arg(long, default_value_t = SimConfig::default().n_nonzero_rows)]
    pub nnz_rows: usize,
    /// Target signal-to-noise ratio; `inf` gives noiseless observations.
    #[arg(long, default_value_t = SimConfig::default().target_snr)]
    pub snr: f64,
    #[arg(long, default_value_t = SimConfig::default().seed)]
    pub seed: u64,
}

impl SimFlags {
    pub fn config(&self) -> SimConfig {
        SimConfig {
            n: self.n,
            p: self.p,
            q: self.q,
            r: self.r,
            rho_x: self.rho_x,
            rho_s: self.rho_s,
            n_nonzero_rows: self.nnz_rows,
            target_snr: self.snr,
            seed: self.seed,
        }
    }

    fn record(&self, m: &mut Manifest) {
        m.set("n", self.n);
        m.set("p", self.p);
        m.set("q", self.q);
        m.set("r", self.r);
        m.set("rho_x", self.rho_x);
        m.set("rho_s", self.rho_s);
        m.set("nnz_rows", self.nnz_rows);
        m.set("snr", self.snr);
        m.set("seed", self.seed);
    }

    fn from_manifest(m: &Manifest) -> Result<Self> {
        Ok(Self {
            n: m.require("n")?,
            p: m.require("p")?,
            q: m.require("q")?,
            r: m.require("r")?,
            rho_x: m.require("rho_x")?,
            rho_s: m.require("rho_s")?,
            nnz_rows: m.require("nnz_rows")?,
            snr: m.require("snr")?,
            seed: m.require("seed")?,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimFlags,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_simulate(args: &SimulateArgs, threads: usize) -> Result<Outcome> {
    let config = args.sim.config();
    let instance = generate(&config)?;
    let ext = args.format.extension();
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_matrix(&args.out.join(format!("X.{ext}")), instance.x.matrix(), args.format)?;
    write_repetitions(&args.out.join("Y"), instance.obs.repetitions(), args.format)?;
    write_matrix(&args.out.join(format!("beta_star.{ext}")), instance.beta_star.matrix(), args.format)?;
    write_matrix(&args.out.join(format!("s_star.{ext}")), &instance.s_star, args.format)?;

    let mut m = Manifest::new("simulate");
    args.sim.record(&mut m);
    m.set("format", ext);
    m.set("threads", threads);
    m.set("achieved_snr", instance.achieved_snr);
    m.write(&args.out.join(manifest::FILE_NAME))?;
    info!("wrote instance with SNR {} to {}", instance.achieved_snr, args.out.display());
    Ok(Outcome::Converged)
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',', default_value = "clar,sgcl,mtl")]
    pub estimators: Vec<String>,
    /// Graphical-lasso penalty for mrcer.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = 160)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    /// Smallest grid value as a fraction of the critical level.
    #[arg(long, default_value_t = GridSpec::DEFAULT_RATIO)]
    pub lambda_min_ratio: f64,
    /// Stop each path once its FPR reaches this value instead of using a fixed ratio.
    #[arg(long)]
    pub target_fpr: Option<f64>,
    #[arg(long)]
    pub sigma_min: Option<f64>,
    #[arg(long, default_value_t = SolverConfig::DEFAULT_GAP_TOL)]
    pub gap_tol: f64,
    #[arg(long, default_value_t = SolverConfig::DEFAULT_MAX_ITERS)]
    pub max_sweeps: usize,
    #[arg(long, default_value_t = SolverConfig::DEFAULT_S_UPDATE_FREQ)]
    pub f_sigma: usize,
    #[arg(long)]
    pub cold_start: bool,
    /// Run the covariance Monte Carlo comparison instead of ROC sweeps.
    #[arg(long)]
    pub covariance_study: bool,
    /// Monte Carlo trials for the covariance study.
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[command(flatten)]
    pub sim: SimFlags,
    #[arg(long)]
    pub out: PathBuf,
}

impl BenchArgs {
    fn kinds(&self) -> Result<Vec<EstimatorKind>> {
        let kinds = self
            .estimators
            .iter()
            .map(|name| EstimatorKind::parse(name.trim(), self.mu))
            .collect::<clar::Result<Vec<_>>>()?;
        if kinds.is_empty() {
            bail!("--estimators lists no estimator");
        }
        Ok(kinds)
    }

    fn grid(&self) -> GridSpec {
        let lambda_min_rule = match self.target_fpr {
            Some(fpr) => LambdaMinRule::TargetFpr(fpr),
            None => LambdaMinRule::Ratio(self.lambda_min_ratio),
        };
        GridSpec { n_points: self.grid_points, lambda_max: None, lambda_min_rule }
    }

    fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            sigma_min: self.sigma_min,
            gap_tol: self.gap_tol,
            max_iters: self.max_sweeps,
            s_update_freq: self.f_sigma,
            warm_start: !self.cold_start,
        }
    }

    fn record(&self, m: &mut Manifest) {
        m.set("estimators", self.estimators.join(","));
        m.set_opt("mu", self.mu);
        m.set("grid_points", self.grid_points);
        m.set("seeds", self.seeds);
        m.set("lambda_min_ratio", self.lambda_min_ratio);
        m.set_opt("target_fpr", self.target_fpr);
        m.set_opt("sigma_min", self.sigma_min);
        m.set("gap_tol", self.gap_tol);
        m.set("max_sweeps", self.max_sweeps);
        m.set("f_sigma", self.f_sigma);
        m.set("cold_start", self.cold_start);
        m.set("covariance_study", self.covariance_study);
        m.set("trials", self.trials);
        self.sim.record(m);
    }

    fn from_manifest(m: &Manifest, out: PathBuf) -> Result<Self> {
        let estimators: String = m.require("estimators")?;
        Ok(Self {
            estimators: estimators.split(',').map(str::to_owned).collect(),
            mu: m.optional("mu")?,
            grid_points: m.require("grid_points")?,
            seeds: m.require("seeds")?,
            lambda_min_ratio: m.require("lambda_min_ratio")?,
            target_fpr: m.optional("target_fpr")?,
            sigma_min: m.optional("sigma_min")?,
            gap_tol: m.require("gap_tol")?,
            max_sweeps: m.require("max_sweeps")?,
            f_sigma: m.require("f_sigma")?,
            cold_start: m.require("cold_start")?,
            covariance_study: m.require("covariance_study")?,
            trials: m.require("trials")?,
            sim: SimFlags::from_manifest(m)?,
            out,
        })
    }
}

pub fn cmd_bench(args: &BenchArgs, threads: usize) -> Result<Outcome> {
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut m = Manifest::new("bench");
    args.record(&mut m);
    m.set("threads", threads);
    if args.covariance_study {
        covariance_bench(args)?;
    } else {
        let kinds = args.kinds()?;
        let config = args.sweep_config();
        validate_sweep(&config)?;
        let report = run_benchmark(&args.sim.config(), args.seeds, &kinds, &args.grid(), &config)?;
        write_report(&args.out, &report)?;
        let any_point = report.runs.iter().any(|(_, c)| c.sweeps.iter().any(|(_, s)| s.is_ok()));
        if !any_point {
            m.write(&args.out.join(manifest::FILE_NAME))?;
            bail!("every grid point of every sweep failed, see failures.csv");
        }
    }
    m.write(&args.out.join(manifest::FILE_NAME))?;
    Ok(Outcome::Converged)
}

fn validate_sweep(config: &SweepConfig) -> Result<()> {
    let probe = SolverConfig::new(1.0, config.sigma_min.unwrap_or(1.0))
        .with_gap_tol(config.gap_tol)
        .with_max_iters(config.max_iters)
        .with_s_update_freq(config.s_update_freq);
    Ok(probe.validate()?)
}

fn covariance_bench(args: &BenchArgs) -> Result<()> {
    let sim = &args.sim;
    let s_star = toeplitz_corr(sim.n, sim.rho_s)?;
    let study = covariance_study(sim.n, sim.q, sim.r, &s_star, args.trials, sim.seed)?;
    info!("variance ratio {:.3} at r = {}", study.variance_ratio, sim.r);
    let row = format!(
        "{},{},{},{},{},{:.16e},{:.16e},{:.16e}",
        sim.n, sim.q, sim.r, args.trials, sim.seed, study.variance_ratio, study.mean_bias_clar, study.mean_bias_sgcl
    );
    write_table(&args.out.join("ratios.csv"), "n,q,r,trials,seed,variance_ratio,mean_bias_clar,mean_bias_sgcl", [row])?;
    Ok(())
}

fn write_report(out: &Path, report: &BenchReport) -> Result<()> {
    let mut roc = Vec::new();
    let mut auc = Vec::new();
    let mut timing = Vec::new();
    let mut failures = Vec::new();
    for (seed, comparison) in &report.runs {
        for (kind, sweep) in &comparison.sweeps {
            match sweep {
                Ok(sweep) => {
                    for pt in sweep.curve.points() {
                        roc.push(format!("{kind},{seed},{:.16e},{:.16e},{:.16e}", pt.lambda, pt.fpr, pt.tpr));
                    }
                    auc.push(format!(
                        "{kind},{seed},{:.16e},{:.16e},{:.16e},{}",
                        sweep.curve.auc(),
                        comparison.common_fpr,
                        sweep.curve.partial_auc(comparison.common_fpr),
                        sweep.unconverged
                    ));
                    timing.push(format!(
                        "{kind},{seed},{},{:.6}",
                        sweep.curve.points().len(),
                        sweep.wall_time.as_secs_f64()
                    ));
                    for failure in &sweep.failures {
                        failures.push(format!("{kind},{seed},{:.16e},{}", failure.lambda, csv_text(&failure.message)));
                    }
                }
                Err(err) => failures.push(format!("{kind},{seed},,{}", csv_text(&err.to_string()))),
            }
        }
    }
    write_table(&out.join("roc.csv"), "estimator,seed,lambda,fpr,tpr", roc)?;
    write_table(&out.join("auc.csv"), "estimator,seed,auc,common_fpr,common_auc,unconverged", auc)?;
    write_table(&out.join("timing.csv"), "estimator,seed,points,wall_seconds", timing)?;
    write_table(&out.join("failures.csv"), "estimator,seed,lambda,message", failures)?;
    Ok(())
}

fn csv_text(message: &str) -> String {
    format!("\"{}\"", message.replace('"', "\"\""))
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for the re-run.
    #[arg(long)]
    pub out: PathBuf,
}

/// Thread count recorded in a manifest, used by replays unless `CLAR_THREADS` is set.
pub fn manifest_threads(path: &Path) -> Result<Option<usize>> {
    Manifest::read(path)?.optional("threads")
}

pub fn cmd_replay(args: &ReplayArgs, threads: usize) -> Result<Outcome> {
    let m = Manifest::read(&args.manifest)?;
    if let Some(recorded) = m.optional::<usize>("threads")? {
        if recorded != threads {
            warn!("manifest was recorded with {recorded} threads, replaying with {threads}");
        }
    }
    let command: String = m.require("command")?;
    let out = args.out.clone();
    match command.as_str() {
        "solve" => cmd_solve(&SolveArgs::from_manifest(&m, out)?, threads),
        "simulate" => {
            let format = match m.get("format") {
                Some("bin") => Format::Bin,
                _ => Format::Csv,
            };
            cmd_simulate(&SimulateArgs { sim: SimFlags::from_manifest(&m)?, format, out }, threads)
        }
        "bench" => cmd_bench(&BenchArgs::from_manifest(&m, out)?, threads),
        other => bail!("manifest records unknown command `{other}`"),
    }
}
