//! The frontier objective `J(ρ) = ∫_T I(J(φ_ρ(t))) · vol(D_θJ · D_tφ) dt`,
//! its exact gradient, the ascent loop and frontier evaluation.

use std::sync::Arc;
use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{PmgaError, Result};
use crate::estimators::{estimate_pooled, par_map, EstimatorOptions, TrajectorySampler};
use crate::lqg::{self, DerivativeMode, LqgSpec};
use crate::manifold::{d2_phi_drho_dt, d_phi_drho, d_phi_dt, phi, sample_latent, LatentDomain, ParametricMap, QuadratureMode};
use crate::matcalc::{self, Mat, Vector, DEFAULT_RANK_TOLERANCE};
use crate::metrics::{self, IndicatorSpec, Normalization};
use crate::rng::derive_seed;

/// Identifies one return evaluation so estimated models can seed it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeKey {
    pub iteration: u64,
    pub node: u64,
}

/// Return, Jacobian and stacked Hessian (`qd × d`) at one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPoint {
    pub j: Vector,
    pub jacobian: Mat,
    pub hessian: Mat,
}

/// Source of `J(θ)` and its first two derivatives.
pub trait ReturnModel: Send + Sync {
    fn n_objectives(&self) -> usize;
    fn theta_dim(&self) -> usize;
    fn evaluate(&self, theta: &[f64], key: NodeKey) -> Result<ReturnPoint>;

    fn value(&self, theta: &[f64], key: NodeKey) -> Result<Vector> {
        Ok(self.evaluate(theta, key)?.j)
    }
}

/// Exact LQG returns.
#[derive(Debug, Clone)]
pub struct LqgModel {
    pub spec: LqgSpec,
    pub mode: DerivativeMode,
}

impl LqgModel {
    pub fn new(spec: LqgSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            mode: DerivativeMode::Analytic,
        })
    }
}

impl ReturnModel for LqgModel {
    fn n_objectives(&self) -> usize {
        self.spec.n_objectives()
    }

    fn theta_dim(&self) -> usize {
        self.spec.theta_dim()
    }

    fn evaluate(&self, theta: &[f64], _key: NodeKey) -> Result<ReturnPoint> {
        let e = lqg::evaluate(&self.spec, theta, self.mode)?;
        Ok(ReturnPoint {
            j: e.j,
            jacobian: e.jacobian,
            hessian: e.hessian,
        })
    }

    fn value(&self, theta: &[f64], _key: NodeKey) -> Result<Vector> {
        lqg::closed_form_j(&self.spec, theta)
    }
}

/// Likelihood-ratio estimates from sampled trajectories. Each node draws
/// `batches` independent batches of `per_batch` trajectories, seeded from
/// `(seed, iteration, node, batch)`; one batch serves the return, the
/// Jacobian and the Hessian alike.
#[derive(Debug, Clone)]
pub struct EstimatedModel<S> {
    pub sampler: S,
    pub per_batch: usize,
    pub batches: usize,
    pub seed: u64,
    pub options: EstimatorOptions,
    only_batch: Option<usize>,
}

impl<S: TrajectorySampler + Send + Clone> EstimatedModel<S> {
    pub fn new(sampler: S, trajectories: usize, batches: usize, seed: u64) -> Result<Self> {
        if batches == 0 || trajectories < batches {
            return Err(PmgaError::InvalidArgument(format!(
                "need at least one trajectory per batch ({trajectories} trajectories, {batches} batches)"
            )));
        }
        Ok(Self {
            sampler,
            per_batch: trajectories / batches,
            batches,
            seed,
            options: EstimatorOptions::default(),
            only_batch: None,
        })
    }

    /// The same model restricted to one of its batches.
    pub fn batch(&self, b: usize) -> Self {
        Self {
            only_batch: Some(b),
            ..self.clone()
        }
    }

    fn seeds(&self, key: NodeKey) -> Vec<u64> {
        let seed = |b: usize| derive_seed(self.seed, &[key.iteration, key.node, b as u64]);
        match self.only_batch {
            Some(b) => vec![seed(b)],
            None => (0..self.batches).map(seed).collect(),
        }
    }
}

impl<S: TrajectorySampler + Send + Clone> ReturnModel for EstimatedModel<S> {
    fn n_objectives(&self) -> usize {
        self.sampler.n_objectives()
    }

    fn theta_dim(&self) -> usize {
        self.sampler.theta_dim()
    }

    fn evaluate(&self, theta: &[f64], key: NodeKey) -> Result<ReturnPoint> {
        let e = estimate_pooled(&self.sampler, theta, self.per_batch, &self.seeds(key), &self.options)?;
        Ok(ReturnPoint {
            j: e.returns,
            jacobian: e.jacobian,
            hessian: e.hessian,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub nodes: usize,
    #[serde(default)]
    pub mode: QuadratureMode,
    #[serde(default)]
    pub seed: u64,
    /// Redraw Monte Carlo nodes every iteration.
    #[serde(default)]
    pub resample: bool,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            nodes: 100,
            mode: QuadratureMode::Grid,
            seed: 0,
            resample: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepRule {
    Constant { rate: f64 },
    /// `rate / sqrt(k + 1)` at iteration `k`.
    InverseSqrt { rate: f64 },
}

impl StepRule {
    pub fn rate(self, k: usize) -> f64 {
        match self {
            StepRule::Constant { rate } => rate,
            StepRule::InverseSqrt { rate } => rate / ((k + 1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnConfig {
    pub map: Arc<dyn ParametricMap>,
    pub indicator: IndicatorSpec,
    pub quadrature: QuadratureSpec,
    pub step: StepRule,
    pub iterations: usize,
    /// Stop once `(max − min) / |J|` over this many iterations drops below
    /// `convergence_threshold`.
    pub convergence_window: usize,
    pub convergence_threshold: f64,
    /// Flag divergence after this many iterations of strict improvement with
    /// growing `‖ρ‖`.
    pub divergence_window: usize,
    pub rho0: Vec<f64>,
}

impl LearnConfig {
    pub fn new(map: Arc<dyn ParametricMap>, indicator: IndicatorSpec, rho0: Vec<f64>) -> Self {
        Self {
            map,
            indicator,
            quadrature: QuadratureSpec::default(),
            step: StepRule::Constant { rate: 1e-3 },
            iterations: 500,
            convergence_window: 50,
            convergence_threshold: 1e-3,
            divergence_window: 50,
            rho0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.indicator.validate()?;
        if self.quadrature.nodes == 0 || self.convergence_window == 0 || self.divergence_window < 2 {
            return Err(PmgaError::InvalidArgument(
                "quadrature nodes and convergence window must be positive, divergence window at least 2".into(),
            ));
        }
        let rate = self.step.rate(0);
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(PmgaError::InvalidArgument(format!("learning rate must be >= 0, got {rate}")));
        }
        if self.rho0.len() != self.map.rho_dim() {
            return Err(PmgaError::Dimension(format!(
                "map `{}` takes {} parameters, initial point has {}",
                self.map.id(),
                self.map.rho_dim(),
                self.rho0.len()
            )));
        }
        Ok(())
    }

    fn nodes(&self, iteration: u64) -> Result<crate::manifold::Quadrature> {
        let seed = if self.quadrature.resample {
            derive_seed(self.quadrature.seed, &[iteration])
        } else {
            self.quadrature.seed
        };
        sample_latent(self.map.domain(), self.quadrature.nodes, self.quadrature.mode, seed)
    }
}

/// One quadrature node of the frontier integral.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierSample {
    pub t: Vec<f64>,
    pub weight: f64,
    pub theta: Vector,
    pub j: Vector,
    pub tangent: Mat,
    pub volume: f64,
    pub indicator: f64,
    pub indicator_grad_j: Vector,
    /// `∂(I · vol)/∂ρ` at this node, unweighted.
    pub contribution: Vector,
    /// `∂vol/∂ρ` at this node, unweighted.
    pub volume_gradient: Vector,
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Normalized objective.
    pub value: f64,
    pub gradient: Option<Vector>,
    /// `∫ I dV`.
    pub integral: f64,
    /// `∫ 1 dV`.
    pub area: f64,
    pub samples: Vec<FrontierSample>,
    pub singular: usize,
}

fn check_model(config: &LearnConfig, model: &dyn ReturnModel) -> Result<()> {
    if config.map.theta_dim() != model.theta_dim() {
        return Err(PmgaError::Dimension(format!(
            "map `{}` produces {} policy parameters, the return model takes {}",
            config.map.id(),
            config.map.theta_dim(),
            model.theta_dim()
        )));
    }
    if model.n_objectives() < config.map.domain().dim() {
        return Err(PmgaError::Dimension(format!(
            "a {}-dimensional latent domain needs at least that many objectives",
            config.map.domain().dim()
        )));
    }
    Ok(())
}

fn frontier_sample(
    config: &LearnConfig,
    model: &dyn ReturnModel,
    rho: &[f64],
    t: &[f64],
    weight: f64,
    key: NodeKey,
    with_gradient: bool,
) -> Result<FrontierSample> {
    let map = &*config.map;
    let (q, d, r) = (model.n_objectives(), map.theta_dim(), map.rho_dim());
    let theta = phi(map, rho, t)?;
    let point = model.evaluate(theta.as_slice(), key)?;
    let dt = d_phi_dt(map, rho, t)?;
    let tangent = &point.jacobian * &dt;
    let gv = matcalc::gram_volume_with_tolerance(&tangent, DEFAULT_RANK_TOLERANCE)?;
    let ind = config.indicator.evaluate(&point.j, Some(&point.jacobian))?;
    let mut sample = FrontierSample {
        t: t.to_vec(),
        weight,
        theta: theta.clone(),
        j: point.j.clone(),
        tangent: tangent.clone(),
        volume: if gv.degenerate { 0.0 } else { gv.volume },
        indicator: ind.value,
        indicator_grad_j: ind.grad_j.clone(),
        contribution: Vector::zeros(r),
        volume_gradient: Vector::zeros(r),
        singular: gv.degenerate,
    };
    if !with_gradient || gv.degenerate {
        return Ok(sample);
    }
    let ddet = match matcalc::gram_det_row_derivative(&tangent) {
        Ok(row) => row,
        Err(PmgaError::SingularGram { .. }) => {
            sample.volume = 0.0;
            sample.singular = true;
            return Ok(sample);
        }
        Err(e) => return Err(e),
    };
    let djac = matcalc::hessian_stack_to_jacobian_derivative(&point.hessian, q, d)?;
    let vol = sample.volume;
    for i in 0..r {
        let dphi = d_phi_drho(map, rho, t, i)?;
        let dmix = d2_phi_drho_dt(map, rho, t, i)?;
        let dg = matcalc::unvec(&(&djac * &dphi), q, d)?;
        let dtan = &dg * &dt + &point.jacobian * &dmix;
        let dvol = (&ddet * matcalc::vec(&dtan))[(0, 0)] / (2.0 * vol);
        let mut di = ind.grad_j.dot(&(&point.jacobian * &dphi));
        if let Some(gg) = &ind.grad_g {
            di += gg.dot(&dg);
        }
        sample.contribution[i] = di * vol + ind.value * dvol;
        sample.volume_gradient[i] = dvol;
    }
    Ok(sample)
}

/// Objective (and optionally gradient) at `ρ` on the nodes of `iteration`.
pub fn evaluate(
    config: &LearnConfig,
    model: &dyn ReturnModel,
    rho: &[f64],
    iteration: u64,
    with_gradient: bool,
) -> Result<Evaluation> {
    check_model(config, model)?;
    let nodes = config.nodes(iteration)?;
    let samples = par_map(nodes.len(), |k| {
        let key = NodeKey {
            iteration,
            node: k as u64,
        };
        frontier_sample(config, model, rho, &nodes.points[k], nodes.weights[k], key, with_gradient)
    });
    let samples: Vec<FrontierSample> = samples.into_iter().collect::<Result<_>>()?;
    let r = config.map.rho_dim();
    let (mut integral, mut area) = (0.0, 0.0);
    let (mut d_integral, mut d_area) = (Vector::zeros(r), Vector::zeros(r));
    let mut singular = 0;
    for s in &samples {
        singular += usize::from(s.singular);
        integral += s.weight * s.indicator * s.volume;
        area += s.weight * s.volume;
        d_integral += &s.contribution * s.weight;
        d_area += &s.volume_gradient * s.weight;
    }
    if singular > 0 {
        log::warn!("{singular} of {} quadrature nodes have a singular tangent and were skipped", samples.len());
    }
    let (value, gradient) = match config.indicator.normalization {
        Normalization::None => (integral, d_integral),
        Normalization::AreaPower { beta } => {
            if beta != 0.0 && area <= 0.0 {
                return Err(PmgaError::InvalidArgument("frontier area vanished under area normalization".into()));
            }
            let scale = if beta == 0.0 { 1.0 } else { area.powf(-beta) };
            let grad = if beta == 0.0 {
                d_integral
            } else {
                d_integral * scale - d_area * (beta * integral * scale / area)
            };
            (integral * scale, grad)
        }
        Normalization::ConvexCombo { w1, w2 } => (
            w1 * integral + w2 * area * area,
            d_integral * w1 + d_area * (2.0 * w2 * area),
        ),
    };
    Ok(Evaluation {
        value,
        gradient: with_gradient.then_some(gradient),
        integral,
        area,
        samples,
        singular,
    })
}

pub fn objective_j_rho(config: &LearnConfig, model: &dyn ReturnModel, rho: &[f64]) -> Result<f64> {
    Ok(evaluate(config, model, rho, 0, false)?.value)
}

pub fn gradient_j_rho(config: &LearnConfig, model: &dyn ReturnModel, rho: &[f64]) -> Result<Vector> {
    Ok(evaluate(config, model, rho, 0, true)?.gradient.expect("requested"))
}

/// Gradient from all batches with a batch-means standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Vector,
    pub standard_error: Vector,
}

pub fn estimated_gradient<S: TrajectorySampler + Send + Clone>(
    config: &LearnConfig,
    model: &EstimatedModel<S>,
    rho: &[f64],
) -> Result<GradientEstimate> {
    if model.batches < 2 {
        return Err(PmgaError::InvalidArgument("standard errors need at least two batches".into()));
    }
    let gradient = gradient_j_rho(config, model, rho)?;
    let per_batch = (0..model.batches)
        .map(|b| gradient_j_rho(config, &model.batch(b), rho))
        .collect::<Result<Vec<_>>>()?;
    let nb = per_batch.len() as f64;
    let mean = per_batch.iter().fold(Vector::zeros(gradient.len()), |acc, g| acc + g) / nb;
    let var = per_batch
        .iter()
        .fold(Vector::zeros(gradient.len()), |acc, g| acc + (g - &mean).map(|x| x * x))
        / (nb - 1.0);
    Ok(GradientEstimate {
        gradient,
        standard_error: var.map(|v| (v / nb).sqrt()),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnTrace {
    pub rho: Vec<Vec<f64>>,
    pub objective: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// Seconds since the start of learning.
    pub wall_time: Vec<f64>,
}

impl LearnTrace {
    pub fn len(&self) -> usize {
        self.objective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objective.is_empty()
    }

    /// `(max − min) / |last|` of the objective over the final `fraction`
    /// of the iterations (at least two).
    pub fn tail_relative_change(&self, fraction: f64) -> f64 {
        let n = self.objective.len();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(2.min(n), n);
        relative_span(&self.objective[n - k..])
    }
}

fn relative_span(values: &[f64]) -> f64 {
    let Some(&last) = values.last() else {
        return f64::INFINITY;
    };
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let span = hi - lo;
    if span == 0.0 {
        0.0
    } else {
        span / last.abs()
    }
}

/// Minimum relative growth of `‖ρ‖` across the window for a run-off.
pub const DIVERGENCE_DRIFT: f64 = 0.01;

/// True when, over the last `window` iterations, the objective improved at
/// every step while `‖ρ‖` grew at every step and by at least
/// [`DIVERGENCE_DRIFT`] overall: the parameters run off while the objective
/// keeps climbing.
pub fn detect_divergence(objective: &[f64], rho: &[Vec<f64>], window: usize, sign: f64) -> bool {
    if window < 2 || objective.len() < window || rho.len() < window {
        return false;
    }
    let tail = &objective[objective.len() - window..];
    if tail.windows(2).any(|w| !(sign * (w[1] - w[0]) > 0.0)) {
        return false;
    }
    let norms: Vec<f64> = rho[rho.len() - window..]
        .iter()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    if norms.windows(2).any(|w| !(w[1] > w[0])) {
        return false;
    }
    let (first, last) = (norms[0], norms[window - 1]);
    last - first >= DIVERGENCE_DRIFT * first.max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnOutcome {
    pub trace: LearnTrace,
    pub rho: Vec<f64>,
    pub status: Status,
    /// Start of the streak of iterations, lasting to the end of the run, in
    /// which the divergence detector fired.
    pub diverged_at: Option<usize>,
}

impl LearnOutcome {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// Gradient ascent (or descent, per the indicator direction) on `ρ`.
pub fn learn(config: &LearnConfig, model: &dyn ReturnModel) -> Result<LearnOutcome> {
    learn_with(config, model, |_, _| {})
}

/// As [`learn`], calling `progress(k, trace)` after every iteration.
pub fn learn_with<F>(config: &LearnConfig, model: &dyn ReturnModel, mut progress: F) -> Result<LearnOutcome>
where
    F: FnMut(usize, &LearnTrace),
{
    config.validate()?;
    check_model(config, model)?;
    let sign = config.indicator.direction().sign();
    let start = Instant::now();
    let mut rho = config.rho0.clone();
    let mut trace = LearnTrace::default();
    let mut status = Status::IterationCap;
    let mut diverged_at = None;
    for k in 0..config.iterations {
        let eval = evaluate(config, model, &rho, k as u64, true)?;
        let grad = eval.gradient.expect("requested");
        if !eval.value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(PmgaError::InvalidArgument(format!("non-finite objective or gradient at iteration {k}")));
        }
        trace.rho.push(rho.clone());
        trace.objective.push(eval.value);
        trace.grad_norm.push(grad.norm());
        trace.wall_time.push(start.elapsed().as_secs_f64());
        progress(k, &trace);
        let running_off = detect_divergence(&trace.objective, &trace.rho, config.divergence_window, sign);
        if running_off {
            if diverged_at.is_none() {
                log::warn!(
                    "objective improved at each of the last {} iterations while the parameters kept growing",
                    config.divergence_window
                );
                diverged_at = Some(k);
            }
        } else {
            diverged_at = None;
        }
        let n = trace.objective.len();
        if !running_off
            && n >= config.convergence_window
            && relative_span(&trace.objective[n - config.convergence_window..]) < config.convergence_threshold
        {
            status = Status::Converged;
            break;
        }
        let eta = config.step.rate(k);
        for (r, g) in rho.iter_mut().zip(grad.iter()) {
            *r += sign * eta * g;
        }
    }
    Ok(LearnOutcome {
        trace,
        rho,
        status,
        diverged_at,
    })
}

/// One point of a dense frontier sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub t: Vec<f64>,
    pub theta: Vector,
    pub j: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierReport {
    pub points: Vec<FrontierPoint>,
    /// Points beaten by another point by `ε · range` in every objective.
    pub dominated: usize,
    /// Points removed by [`metrics::pareto_filter`].
    pub filtered: usize,
    pub area: f64,
    pub hypervolume: Option<f64>,
    pub j_min: Vec<f64>,
    pub j_max: Vec<f64>,
}

/// Evenly spaced latent points including the boundary: `n` points on the
/// interval, the smallest triangular lattice with at least `n` points on
/// the simplex.
pub fn latent_sweep(domain: LatentDomain, n: usize) -> Vec<Vec<f64>> {
    match domain {
        LatentDomain::Interval => {
            if n <= 1 {
                return vec![vec![0.5]];
            }
            (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
        }
        LatentDomain::Simplex => {
            let mut m = 1;
            while (m + 1) * (m + 2) / 2 < n {
                m += 1;
            }
            let mf = m as f64;
            let mut pts = Vec::new();
            for i in 0..=m {
                for j in 0..=(m - i) {
                    pts.push(vec![i as f64 / mf, j as f64 / mf]);
                }
            }
            pts
        }
    }
}

/// Dense sweep of the frontier at `ρ` plus its statistics. `model` supplies
/// the returns of the sweep; the area uses the learning quadrature.
pub fn evaluate_frontier(
    config: &LearnConfig,
    model: &dyn ReturnModel,
    rho: &[f64],
    n_points: usize,
    epsilon: f64,
    hv_reference: Option<&[f64]>,
) -> Result<FrontierReport> {
    check_model(config, model)?;
    let map = &*config.map;
    let ts = latent_sweep(map.domain(), n_points);
    let points = par_map(ts.len(), |k| -> Result<FrontierPoint> {
        let theta = phi(map, rho, &ts[k])?;
        let key = NodeKey {
            iteration: u64::MAX,
            node: k as u64,
        };
        let j = model.value(theta.as_slice(), key)?;
        Ok(FrontierPoint {
            t: ts[k].clone(),
            theta,
            j,
        })
    });
    let points: Vec<FrontierPoint> = points.into_iter().collect::<Result<_>>()?;
    let js: Vec<Vector> = points.iter().map(|p| p.j.clone()).collect();
    let q = model.n_objectives();
    let j_min = (0..q).map(|k| js.iter().map(|j| j[k]).fold(f64::INFINITY, f64::min)).collect();
    let j_max = (0..q).map(|k| js.iter().map(|j| j[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let area = evaluate(config, model, rho, 0, false)?.area;
    let hypervolume = hv_reference.map(|r| metrics::hypervolume(&js, r)).transpose()?;
    Ok(FrontierReport {
        dominated: metrics::epsilon_dominated_count(&js, epsilon),
        filtered: js.len() - metrics::pareto_filter(&js, epsilon).len(),
        points,
        area,
        hypervolume,
        j_min,
        j_max,
    })
}
