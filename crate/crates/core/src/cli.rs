//! Config-driven experiment runner and data export.
//!
//! An experiment is one TOML file. `run` learns `ρ` and writes
//! `trace.csv`, `frontier.csv` and `summary.json` to the output directory;
//! `frontier` re-evaluates a stored `ρ`; `check-grad` compares the analytic
//! gradient of `J(ρ)` with finite differences; `sample-bound` prints the
//! trajectory count for a Hessian accuracy target.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{PmgaError, Result};
use crate::estimators::{hessian_sample_count, Baseline, EstimatorBounds, EstimatorOptions};
use crate::lqg::{DerivativeMode, GainStructure, LqgSampler, LqgSpec, OwnActionCost};
use crate::manifold::{MapRegistry, QuadratureMode};
use crate::matcalc::{Mat, Vector};
use crate::metrics::{IndicatorSpec, ReferenceKind};
use crate::numdiff::{max_relative_error, richardson_gradient};
use crate::pmga::{
    evaluate_frontier, gradient_j_rho, learn_with, objective_j_rho, EstimatedModel, FrontierReport, LearnConfig,
    LearnOutcome, LqgModel, QuadratureSpec, ReturnModel, Status, StepRule,
};
use crate::reservoir::{ReservoirSampler, ReservoirSpec};
use crate::rng::derive_seed;

/// Largest relative error accepted by `check-grad`.
pub const GRADIENT_TOLERANCE: f64 = 1e-3;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FLAGGED: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random stream in the run.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lqg: Option<LqgConfig>,
    #[serde(default)]
    pub reservoir: Option<ReservoirSpec>,
    pub map: MapConfig,
    pub indicator: IndicatorSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub frontier: FrontierConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqgConfig {
    pub n: usize,
    pub gamma: f64,
    pub xi: f64,
    /// Policy covariance rows; identity when absent.
    pub sigma: Option<Vec<Vec<f64>>>,
    /// Initial state; `10·1` when absent.
    pub s0: Option<Vec<f64>>,
    pub horizon: usize,
    pub gains: GainStructure,
    pub own_action: OwnActionCost,
}

impl Default for LqgConfig {
    fn default() -> Self {
        let s = LqgSpec::standard(2);
        Self {
            n: s.n,
            gamma: s.gamma,
            xi: s.xi,
            sigma: None,
            s0: None,
            horizon: s.horizon,
            gains: s.gains,
            own_action: s.own_action,
        }
    }
}

impl LqgConfig {
    pub fn spec(&self) -> Result<LqgSpec> {
        let mut spec = LqgSpec::standard(self.n);
        spec.gamma = self.gamma;
        spec.xi = self.xi;
        spec.horizon = self.horizon;
        spec.gains = self.gains;
        spec.own_action = self.own_action;
        if let Some(rows) = &self.sigma {
            if rows.len() != self.n || rows.iter().any(|r| r.len() != self.n) {
                return Err(PmgaError::Config(format!("lqg.sigma must be {0} x {0}", self.n)));
            }
            spec.sigma = Mat::from_fn(self.n, self.n, |i, j| rows[i][j]);
        }
        if let Some(s0) = &self.s0 {
            spec.s0 = Vector::from_column_slice(s0);
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub id: String,
    pub rho0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    InverseSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub rate: f64,
    pub schedule: Schedule,
    pub iterations: usize,
    pub convergence_window: usize,
    pub convergence_threshold: f64,
    pub divergence_window: usize,
    /// Log progress every this many iterations (0 disables).
    pub log_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            rate: 1e-3,
            schedule: Schedule::Constant,
            iterations: 500,
            convergence_window: 50,
            convergence_threshold: 1e-3,
            divergence_window: 50,
            log_every: 50,
        }
    }
}

impl OptimizerConfig {
    pub fn step(&self) -> StepRule {
        match self.schedule {
            Schedule::Constant => StepRule::Constant { rate: self.rate },
            Schedule::InverseSqrt => StepRule::InverseSqrt { rate: self.rate },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub nodes: usize,
    pub mode: QuadratureMode,
    pub resample: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        let q = QuadratureSpec::default();
        Self {
            nodes: q.nodes,
            mode: q.mode,
            resample: q.resample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    ClosedForm,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleTarget {
    pub r_bar: f64,
    pub d_bar: f64,
    pub g_bar: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub epsilon: f64,
    pub delta: f64,
}

impl SampleTarget {
    pub fn count(&self) -> Result<u64> {
        let bounds = EstimatorBounds {
            r_bar: self.r_bar,
            d_bar: self.d_bar,
            g_bar: self.g_bar,
            gamma: self.gamma,
            horizon: self.horizon,
        };
        hessian_sample_count(&bounds, self.epsilon, self.delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub mode: EstimationMode,
    /// Closed-form derivative method.
    pub derivatives: DerivativeMode,
    /// Trajectories per node; the reservoir learning episodes when absent.
    pub trajectories: Option<usize>,
    pub batches: usize,
    pub baseline: Baseline,
    /// Weight each reward by the policy derivatives of earlier actions only.
    pub causal: bool,
    pub symmetrize: bool,
    /// Frontier evaluation episodes for the reservoir; its `eval_episodes`
    /// when absent.
    pub eval_episodes: Option<usize>,
    /// Derive the trajectory count from an accuracy target instead.
    pub target: Option<SampleTarget>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            mode: EstimationMode::ClosedForm,
            derivatives: DerivativeMode::Analytic,
            trajectories: None,
            batches: 1,
            baseline: Baseline::None,
            causal: false,
            symmetrize: true,
            eval_episodes: None,
            target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontierConfig {
    pub points: usize,
    /// ε-dominance slack as a fraction of each objective's range.
    pub epsilon: f64,
    /// Hypervolume reference; the indicator's antiutopia when absent.
    pub hv_reference: Option<Vec<f64>>,
}

impl Default for FrontierConfig {
    fn default() -> Self {
        Self {
            points: 100,
            epsilon: 0.01,
            hv_reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("pmga-out"),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config; errors carry the offending line.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PmgaError::Config(e.to_string()))
    }

    /// Reads a config and loads inflow files relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PmgaError::Io(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text).map_err(|e| PmgaError::Config(format!("{}: {e}", path.display())))?;
        if let Some(spec) = config.reservoir.as_mut() {
            let base = path.parent().unwrap_or(Path::new("."));
            spec.inflow = std::mem::take(&mut spec.inflow).resolve(base)?;
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| PmgaError::Config(e.to_string()))
    }

    pub fn build(&self) -> Result<Experiment> {
        self.build_with(&MapRegistry::builtin())
    }

    /// Resolves the map in `registry` and instantiates the models.
    pub fn build_with(&self, registry: &MapRegistry) -> Result<Experiment> {
        let map = registry.get(&self.map.id)?;
        let mut learn = LearnConfig::new(map, self.indicator.clone(), self.map.rho0.clone());
        learn.quadrature = QuadratureSpec {
            nodes: self.quadrature.nodes,
            mode: self.quadrature.mode,
            seed: derive_seed(self.seed, &[0]),
            resample: self.quadrature.resample,
        };
        learn.step = self.optimizer.step();
        learn.iterations = self.optimizer.iterations;
        learn.convergence_window = self.optimizer.convergence_window;
        learn.convergence_threshold = self.optimizer.convergence_threshold;
        learn.divergence_window = self.optimizer.divergence_window;
        learn.validate()?;

        let est = &self.estimation;
        let options = EstimatorOptions {
            baseline: est.baseline,
            causal: est.causal,
            symmetrize: est.symmetrize,
        };
        let learn_seed = derive_seed(self.seed, &[1]);
        let eval_seed = derive_seed(self.seed, &[2]);
        let target_count = est
            .target
            .map(|t| t.count())
            .transpose()?
            .map(|n| usize::try_from(n).unwrap_or(usize::MAX));

        let (model, eval_model): (Arc<dyn ReturnModel>, Arc<dyn ReturnModel>) = match (&self.lqg, &self.reservoir) {
            (Some(lqg), None) => {
                let spec = lqg.spec()?;
                let mut exact = LqgModel::new(spec.clone())?;
                exact.mode = est.derivatives;
                let exact: Arc<dyn ReturnModel> = Arc::new(exact);
                match est.mode {
                    EstimationMode::ClosedForm => (exact.clone(), exact),
                    EstimationMode::Estimated => {
                        let n = target_count.or(est.trajectories).unwrap_or(100);
                        let mut m = EstimatedModel::new(LqgSampler::new(spec)?, n, est.batches, learn_seed)?;
                        m.options = options;
                        (Arc::new(m), exact)
                    }
                }
            }
            (None, Some(spec)) => {
                if est.mode != EstimationMode::Estimated {
                    return Err(PmgaError::Config(
                        "the reservoir has no closed form; set estimation.mode = \"estimated\"".into(),
                    ));
                }
                let n = target_count.or(est.trajectories).unwrap_or(spec.learn_episodes);
                let mut m = EstimatedModel::new(ReservoirSampler::learning(spec.clone())?, n, est.batches, learn_seed)?;
                m.options = options;
                let episodes = est.eval_episodes.unwrap_or(spec.eval_episodes);
                let e = EstimatedModel::new(ReservoirSampler::evaluation(spec.clone())?, episodes, 1, eval_seed)?;
                (Arc::new(m), Arc::new(e))
            }
            _ => {
                return Err(PmgaError::Config(
                    "exactly one domain section, [lqg] or [reservoir], is required".into(),
                ))
            }
        };

        let hv_reference = match (&self.frontier.hv_reference, &self.indicator.reference) {
            (Some(r), _) => Some(r.clone()),
            (None, Some(p)) if p.kind == ReferenceKind::Antiutopia => Some(p.point.clone()),
            _ => None,
        };
        if let Some(r) = &hv_reference {
            if r.len() != model.n_objectives() {
                return Err(PmgaError::Dimension(format!(
                    "hypervolume reference has {} entries for {} objectives",
                    r.len(),
                    model.n_objectives()
                )));
            }
        }
        if self.frontier.points == 0 || !(self.frontier.epsilon >= 0.0) {
            return Err(PmgaError::Config("frontier needs points > 0 and epsilon >= 0".into()));
        }
        Ok(Experiment {
            config: self.clone(),
            learn,
            model,
            eval_model,
            hv_reference,
        })
    }
}

/// A validated, instantiated experiment.
#[derive(Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub learn: LearnConfig,
    /// Supplies returns and derivatives during learning.
    pub model: Arc<dyn ReturnModel>,
    /// Supplies returns for frontier reports.
    pub eval_model: Arc<dyn ReturnModel>,
    pub hv_reference: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierStats {
    pub points: usize,
    pub epsilon: f64,
    pub area: f64,
    pub hypervolume: Option<f64>,
    pub dominated: usize,
    pub filtered: usize,
    pub j_min: Vec<f64>,
    pub j_max: Vec<f64>,
}

impl FrontierStats {
    pub fn new(report: &FrontierReport, epsilon: f64) -> Self {
        Self {
            points: report.points.len(),
            epsilon,
            area: report.area,
            hypervolume: report.hypervolume,
            dominated: report.dominated,
            filtered: report.filtered,
            j_min: report.j_min.clone(),
            j_max: report.j_max.clone(),
        }
    }

    /// Largest relative difference between two sets of statistics; count
    /// mismatches yield infinity.
    pub fn max_relative_difference(&self, other: &Self) -> f64 {
        if self.points != other.points
            || self.dominated != other.dominated
            || self.filtered != other.filtered
            || self.hypervolume.is_some() != other.hypervolume.is_some()
            || self.j_min.len() != other.j_min.len()
        {
            return f64::INFINITY;
        }
        let mut a = vec![self.area];
        let mut b = vec![other.area];
        a.extend(self.hypervolume);
        b.extend(other.hypervolume);
        a.extend(self.j_min.iter().chain(&self.j_max));
        b.extend(other.j_min.iter().chain(&other.j_max));
        max_relative_error(&a, &b, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    IterationCap,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub map: String,
    pub rho0: Vec<f64>,
    pub rho: Vec<f64>,
    pub status: RunStatus,
    pub diverged_at: Option<usize>,
    pub iterations: usize,
    pub objective: f64,
    pub tail_relative_change: f64,
    pub frontier: FrontierStats,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::Diverged => EXIT_FLAGGED,
            RunStatus::Converged | RunStatus::IterationCap => EXIT_OK,
        }
    }
}

impl Experiment {
    pub fn learn(&self) -> Result<LearnOutcome> {
        let every = self.config.optimizer.log_every;
        learn_with(&self.learn, &*self.model, |k, trace| {
            if every > 0 && k % every == 0 {
                log::info!(
                    "iteration {k}: J(rho) = {:.6e}, |grad| = {:.3e}",
                    trace.objective[k],
                    trace.grad_norm[k]
                );
            }
        })
    }

    pub fn frontier(&self, rho: &[f64]) -> Result<FrontierReport> {
        evaluate_frontier(
            &self.learn,
            &*self.eval_model,
            rho,
            self.config.frontier.points,
            self.config.frontier.epsilon,
            self.hv_reference.as_deref(),
        )
    }

    pub fn summarize(&self, outcome: &LearnOutcome, report: &FrontierReport) -> RunSummary {
        let status = match (outcome.diverged(), outcome.status) {
            (true, _) => RunStatus::Diverged,
            (false, Status::Converged) => RunStatus::Converged,
            (false, Status::IterationCap) => RunStatus::IterationCap,
        };
        RunSummary {
            map: self.config.map.id.clone(),
            rho0: self.learn.rho0.clone(),
            rho: outcome.rho.clone(),
            status,
            diverged_at: outcome.diverged_at,
            iterations: outcome.trace.len(),
            objective: outcome.trace.objective.last().copied().unwrap_or(f64::NAN),
            tail_relative_change: outcome.trace.tail_relative_change(0.1),
            frontier: FrontierStats::new(report, self.config.frontier.epsilon),
        }
    }

    /// Learns, evaluates the final frontier and writes the three output files.
    pub fn run(&self, out_dir: &Path) -> Result<RunSummary> {
        let outcome = self.learn()?;
        let report = self.frontier(&outcome.rho)?;
        let summary = self.summarize(&outcome, &report);
        std::fs::create_dir_all(out_dir)?;
        write_trace_csv(&out_dir.join("trace.csv"), &outcome)?;
        write_frontier_csv(&out_dir.join("frontier.csv"), &report)?;
        write_json(&out_dir.join("summary.json"), &summary)?;
        Ok(summary)
    }

    /// Analytic versus Richardson finite-difference gradient of `J(ρ)`.
    pub fn check_gradient(&self, rho: &[f64], step: f64) -> Result<GradientCheck> {
        let analytic = gradient_j_rho(&self.learn, &*self.model, rho)?;
        let x = Vector::from_column_slice(rho);
        let failure = std::cell::OnceCell::new();
        let numeric = richardson_gradient(
            |r: &Vector| match objective_j_rho(&self.learn, &*self.model, r.as_slice()) {
                Ok(v) => v,
                Err(e) => {
                    let _ = failure.set(e);
                    f64::NAN
                }
            },
            &x,
            step,
            3,
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        let scale = numeric.amax().max(analytic.amax());
        let error = if scale == 0.0 {
            0.0
        } else {
            max_relative_error(analytic.as_slice(), numeric.as_slice(), scale * GRADIENT_FLOOR_FRACTION)
        };
        Ok(GradientCheck {
            analytic: analytic.as_slice().to_vec(),
            numeric: numeric.as_slice().to_vec(),
            max_relative_error: error,
            passed: error <= GRADIENT_TOLERANCE,
        })
    }
}

/// Components smaller than this fraction of the largest gradient entry are
/// compared against that floor instead of their own magnitude.
pub const GRADIENT_FLOOR_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_relative_error: f64,
    pub passed: bool,
}

fn csv_error(e: csv::Error) -> PmgaError {
    PmgaError::Io(e.to_string())
}

/// Columns: `iteration, J_rho, grad_norm, rho_1, …, rho_m`.
pub fn write_trace_csv(path: &Path, outcome: &LearnOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let m = outcome.trace.rho.first().map_or(outcome.rho.len(), Vec::len);
    let mut header = vec!["iteration".to_string(), "J_rho".into(), "grad_norm".into()];
    header.extend((1..=m).map(|i| format!("rho_{i}")));
    w.write_record(&header).map_err(csv_error)?;
    let t = &outcome.trace;
    for k in 0..t.len() {
        let mut row = vec![k.to_string(), t.objective[k].to_string(), t.grad_norm[k].to_string()];
        row.extend(t.rho[k].iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `t_1, …, t_b, theta_1, …, theta_d, J_1, …, J_q`.
pub fn write_frontier_csv(path: &Path, report: &FrontierReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let Some(first) = report.points.first() else {
        return Ok(());
    };
    let mut header: Vec<String> = (1..=first.t.len()).map(|i| format!("t_{i}")).collect();
    header.extend((1..=first.theta.len()).map(|i| format!("theta_{i}")));
    header.extend((1..=first.j.len()).map(|i| format!("J_{i}")));
    w.write_record(&header).map_err(csv_error)?;
    for p in &report.points {
        let row: Vec<String> = p
            .t
            .iter()
            .chain(p.theta.iter())
            .chain(p.j.iter())
            .map(f64::to_string)
            .collect();
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PmgaError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| PmgaError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PmgaError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(name = "pmga", version, about = "Pareto-manifold gradient ascent experiments")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true, env = "PMGA_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory, overriding the config.
    #[arg(long, env = "PMGA_OUT_DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a frontier and write trace, frontier and summary files.
    Run {
        config: PathBuf,
        /// Validate the config and exit.
        #[arg(long)]
        dry_run: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Compare the analytic gradient of J(rho) with finite differences.
    CheckGrad {
        config: PathBuf,
        /// Evaluate at this rho instead of the initial point.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        rho: Option<Vec<f64>>,
        /// Base finite-difference step.
        #[arg(long, default_value_t = 1e-2)]
        step: f64,
    },
    /// Trajectories needed for a Hessian estimate within epsilon w.p. 1 - delta.
    SampleBound {
        r_bar: f64,
        d_bar: f64,
        g_bar: f64,
        gamma: f64,
        horizon: usize,
        epsilon: f64,
        delta: f64,
    },
    /// Evaluate the frontier of a stored rho.
    Frontier {
        config: PathBuf,
        /// Summary file whose final rho is evaluated.
        #[arg(long, conflicts_with = "rho")]
        summary: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        rho: Option<Vec<f64>>,
        #[command(flatten)]
        out: OutArg,
    },
}

fn out_dir(config: &ExperimentConfig, arg: &OutArg) -> PathBuf {
    arg.out.clone().unwrap_or_else(|| config.output.dir.clone())
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(PmgaError::InvalidArgument("--threads must be positive".into()));
    }
    #[cfg(feature = "parallel")]
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::debug!("thread pool already configured: {e}");
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<i32> {
    set_threads(cli.threads)?;
    match cli.command {
        Command::Run { config, dry_run, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let exp = cfg.build()?;
            if dry_run {
                println!(
                    "{}: valid ({} parameters, {} objectives)",
                    config.display(),
                    exp.learn.rho0.len(),
                    exp.model.n_objectives()
                );
                return Ok(EXIT_OK);
            }
            let dir = out_dir(&cfg, &out);
            let summary = exp.run(&dir)?;
            println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| PmgaError::Io(e.to_string()))?);
            Ok(summary.exit_code())
        }
        Command::CheckGrad { config, rho, step } => {
            let exp = ExperimentConfig::load(&config)?.build()?;
            let rho = rho.unwrap_or_else(|| exp.learn.rho0.clone());
            let check = exp.check_gradient(&rho, step)?;
            println!("analytic: {:?}", check.analytic);
            println!("numeric:  {:?}", check.numeric);
            println!("max relative error: {:.3e}", check.max_relative_error);
            Ok(if check.passed { EXIT_OK } else { EXIT_FLAGGED })
        }
        Command::SampleBound {
            r_bar,
            d_bar,
            g_bar,
            gamma,
            horizon,
            epsilon,
            delta,
        } => {
            let bounds = EstimatorBounds {
                r_bar,
                d_bar,
                g_bar,
                gamma,
                horizon,
            };
            println!("{}", hessian_sample_count(&bounds, epsilon, delta)?);
            Ok(EXIT_OK)
        }
        Command::Frontier {
            config,
            summary,
            rho,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let exp = cfg.build()?;
            let rho = match (summary, rho) {
                (Some(path), _) => read_summary(&path)?.rho,
                (None, Some(r)) => r,
                (None, None) => exp.learn.rho0.clone(),
            };
            let report = exp.frontier(&rho)?;
            let stats = FrontierStats::new(&report, cfg.frontier.epsilon);
            let dir = out_dir(&cfg, &out);
            std::fs::create_dir_all(&dir)?;
            write_frontier_csv(&dir.join("frontier.csv"), &report)?;
            write_json(&dir.join("frontier.json"), &stats)?;
            println!("{}", serde_json::to_string_pretty(&stats).map_err(|e| PmgaError::Io(e.to_string()))?);
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
