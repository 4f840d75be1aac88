//! Browser bindings: frontier evaluation and stepwise learning on the
//! two-objective LQG, and the Hessian-estimation sample bound.

use std::sync::Arc;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use pmga::estimators::{hessian_sample_count, EstimatorBounds};
use pmga::lqg::LqgSpec;
use pmga::manifold::lqg2_free;
use pmga::metrics::IndicatorSpec;
use pmga::pmga::{evaluate_frontier, learn, FrontierReport, LearnConfig, LqgModel, StepRule};

const ANTIUTOPIA: [f64; 2] = [-321.829935, -321.829935];
const QUADRATURE_NODES: usize = 40;
const EPSILON: f64 = 0.01;

#[derive(Serialize)]
struct FrontierView {
    points: Vec<[f64; 2]>,
    area: f64,
    hypervolume: Option<f64>,
    dominated: usize,
}

impl From<FrontierReport> for FrontierView {
    fn from(r: FrontierReport) -> Self {
        Self {
            points: r.points.iter().map(|p| [p.j[0], p.j[1]]).collect(),
            area: r.area,
            hypervolume: r.hypervolume,
            dominated: r.dominated,
        }
    }
}

#[derive(Serialize)]
struct StepView {
    iteration: usize,
    objective: f64,
    rho: Vec<f64>,
    diverged: bool,
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn config(lambda: f64, rate: f64, rho: Vec<f64>) -> LearnConfig {
    let mut c = LearnConfig::new(Arc::new(lqg2_free(true)), IndicatorSpec::mixed(ANTIUTOPIA.to_vec(), lambda), rho);
    c.quadrature.nodes = QUADRATURE_NODES;
    c.step = StepRule::Constant { rate };
    c.convergence_window = usize::MAX;
    c
}

fn model() -> Result<LqgModel, JsError> {
    LqgModel::new(LqgSpec::standard(2)).map_err(js_err)
}

fn frontier_json(config: &LearnConfig, rho: &[f64], points: usize) -> Result<String, JsError> {
    let report = evaluate_frontier(config, &model()?, rho, points, EPSILON, Some(&ANTIUTOPIA)).map_err(js_err)?;
    serde_json::to_string(&FrontierView::from(report)).map_err(js_err)
}

/// Frontier of the free LQG map at `rho`, as JSON
/// `{points, area, hypervolume, dominated}`.
#[wasm_bindgen]
pub fn lqg_frontier(rho: Vec<f64>, points: usize) -> Result<String, JsError> {
    frontier_json(&config(0.0, 0.0, rho.clone()), &rho, points)
}

/// Trajectories needed for a Hessian estimate within `epsilon` with
/// probability `1 - delta`.
#[wasm_bindgen]
pub fn sample_bound(
    r_bar: f64,
    d_bar: f64,
    g_bar: f64,
    gamma: f64,
    horizon: usize,
    epsilon: f64,
    delta: f64,
) -> Result<f64, JsError> {
    let bounds = EstimatorBounds {
        r_bar,
        d_bar,
        g_bar,
        gamma,
        horizon,
    };
    hessian_sample_count(&bounds, epsilon, delta).map(|n| n as f64).map_err(js_err)
}

/// Gradient ascent on the mixed indicator, advanced a few iterations at a time.
#[wasm_bindgen]
pub struct Learner {
    config: LearnConfig,
    model: LqgModel,
    rho: Vec<f64>,
    iteration: usize,
    objective: Vec<f64>,
    history: Vec<Vec<f64>>,
}

#[wasm_bindgen]
impl Learner {
    #[wasm_bindgen(constructor)]
    pub fn new(lambda: f64, rate: f64, rho0: Vec<f64>) -> Result<Learner, JsError> {
        let config = config(lambda, rate, rho0.clone());
        config.validate().map_err(js_err)?;
        Ok(Learner {
            config,
            model: model()?,
            rho: rho0,
            iteration: 0,
            objective: Vec::new(),
            history: Vec::new(),
        })
    }

    /// Runs `iterations` updates and returns JSON
    /// `{iteration, objective, rho, diverged}`.
    pub fn step(&mut self, iterations: usize) -> Result<String, JsError> {
        let mut cfg = self.config.clone();
        cfg.rho0 = self.rho.clone();
        cfg.iterations = iterations;
        let out = learn(&cfg, &self.model).map_err(js_err)?;
        self.objective.extend(&out.trace.objective);
        self.history.extend(out.trace.rho);
        self.rho = out.rho;
        self.iteration += iterations;
        let diverged = pmga::pmga::detect_divergence(
            &self.objective,
            &self.history,
            self.config.divergence_window,
            self.config.indicator.direction().sign(),
        );
        serde_json::to_string(&StepView {
            iteration: self.iteration,
            objective: self.objective.last().copied().unwrap_or(f64::NAN),
            rho: self.rho.clone(),
            diverged,
        })
        .map_err(js_err)
    }

    /// Frontier at the current parameters; see [`lqg_frontier`].
    pub fn frontier(&self, points: usize) -> Result<String, JsError> {
        frontier_json(&self.config, &self.rho, points)
    }

    /// Objective value recorded at every iteration so far.
    pub fn objective_history(&self) -> Vec<f64> {
        self.objective.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frontier_json_has_requested_points() {
        let v: serde_json::Value =
            serde_json::from_str(&frontier_json(&config(0.0, 0.0, vec![1.0, 2.0, 0.0, 3.0]), &[1.0, 2.0, 0.0, 3.0], 25).unwrap())
                .unwrap();
        assert_eq!(v["points"].as_array().unwrap().len(), 25);
        assert!(v["hypervolume"].as_f64().unwrap() > 0.0);
    }
}
