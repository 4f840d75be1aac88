use std::sync::Arc;

use proptest::prelude::*;

use pmga::lqg::{LqgSampler, LqgSpec};
use pmga::manifold::{lqg2_free, lqg2_segment, lqg3_pinned, LatentDomain, QuadratureMode};
use pmga::metrics::IndicatorSpec;
use pmga::numdiff::richardson_gradient;
use pmga::pmga::{
    detect_divergence, evaluate_frontier, gradient_j_rho, latent_sweep, learn, objective_j_rho, EstimatedModel,
    LearnConfig, LqgModel, StepRule,
};
use pmga::Vector;

const ANTIUTOPIA2: f64 = -321.829935;

fn lqg2_config(lambda: f64, rho0: Vec<f64>) -> LearnConfig {
    let mut c = LearnConfig::new(Arc::new(lqg2_free(true)), IndicatorSpec::mixed(vec![ANTIUTOPIA2; 2], lambda), rho0);
    c.quadrature.nodes = 20;
    c.step = StepRule::Constant { rate: 0.006 };
    c
}

fn relative_gap(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax() / b.amax().max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradient_matches_differences_on_the_simplex(rho in prop::collection::vec(-0.5..0.5f64, 9), lambda in 0.0..2.0f64) {
        let model = LqgModel::new(LqgSpec::standard(3)).unwrap();
        let anti = vec![-1000.0; 3];
        let mut config = LearnConfig::new(Arc::new(lqg3_pinned()), IndicatorSpec::mixed(anti, lambda), rho.clone());
        config.quadrature.nodes = 16;
        let analytic = gradient_j_rho(&config, &model, &rho).unwrap();
        let fd = richardson_gradient(|r: &Vector| objective_j_rho(&config, &model, r.as_slice()).unwrap(), &Vector::from_column_slice(&rho), 1e-2, 3);
        prop_assert!(relative_gap(&analytic, &fd) < 1e-5, "{analytic} vs {fd}");
    }

    #[test]
    fn monte_carlo_quadrature_gradient_matches_differences(seed in any::<u64>(), shift in prop::collection::vec(-1.0..1.0f64, 4)) {
        let model = LqgModel::new(LqgSpec::standard(2)).unwrap();
        let rho: Vec<f64> = [1.0, 2.0, 0.0, 3.0].iter().zip(&shift).map(|(a, b)| a + b).collect();
        let mut config = lqg2_config(2.5, rho.clone());
        config.quadrature.mode = QuadratureMode::MonteCarlo;
        config.quadrature.seed = seed;
        let analytic = gradient_j_rho(&config, &model, &rho).unwrap();
        let fd = richardson_gradient(|r: &Vector| objective_j_rho(&config, &model, r.as_slice()).unwrap(), &Vector::from_column_slice(&rho), 1e-2, 3);
        prop_assert!(relative_gap(&analytic, &fd) < 1e-5);
    }

    #[test]
    fn divergence_needs_a_strictly_improving_window(len in 2usize..80, window in 2usize..60) {
        let objective: Vec<f64> = (0..len).map(|k| k as f64).collect();
        let rho: Vec<Vec<f64>> = (0..len).map(|k| vec![1.0 + k as f64]).collect();
        prop_assert_eq!(detect_divergence(&objective, &rho, window, 1.0), len >= window);
        prop_assert!(!detect_divergence(&objective, &rho, window, -1.0));
        let flat = vec![1.0; len];
        prop_assert!(!detect_divergence(&flat, &rho, window, 1.0));
    }
}

#[test]
fn parameter_free_map_has_zero_gradient() {
    let model = LqgModel::new(LqgSpec::standard(2)).unwrap();
    let config = LearnConfig::new(Arc::new(lqg2_segment()), IndicatorSpec::mixed(vec![ANTIUTOPIA2; 2], 1.0), vec![0.3]);
    assert_eq!(gradient_j_rho(&config, &model, &[0.3]).unwrap()[0], 0.0);
}

#[test]
fn learning_is_deterministic_and_improves() {
    let model = LqgModel::new(LqgSpec::standard(2)).unwrap();
    let mut config = lqg2_config(2.5, vec![1.0, 2.0, 0.0, 3.0]);
    config.iterations = 30;
    let a = learn(&config, &model).unwrap();
    let b = learn(&config, &model).unwrap();
    assert_eq!(a.rho, b.rho);
    assert_eq!(a.trace.objective, b.trace.objective);
    assert_eq!(a.trace.len(), 30);
    assert!(a.trace.objective.last().unwrap() > &a.trace.objective[0]);
    assert!(!a.diverged());
}

#[test]
fn estimated_model_is_reproducible_and_reports_errors() {
    let sampler = LqgSampler::new(LqgSpec::standard(2)).unwrap();
    let model = EstimatedModel::new(sampler, 400, 4, 3).unwrap();
    let config = lqg2_config(2.5, vec![1.0, 2.0, 0.0, 3.0]);
    let rho = [1.0, 2.0, 0.0, 3.0];
    let a = pmga::pmga::estimated_gradient(&config, &model, &rho).unwrap();
    let b = pmga::pmga::estimated_gradient(&config, &model, &rho).unwrap();
    assert_eq!(a.gradient, b.gradient);
    assert!(a.standard_error.iter().all(|s| s.is_finite() && *s > 0.0));
    let single = EstimatedModel::new(LqgSampler::new(LqgSpec::standard(2)).unwrap(), 400, 1, 3).unwrap();
    assert!(pmga::pmga::estimated_gradient(&config, &single, &rho).is_err());
}

#[test]
fn frontier_report_is_consistent() {
    let model = LqgModel::new(LqgSpec::standard(2)).unwrap();
    let config = lqg2_config(2.5, vec![1.0, 2.0, 0.0, 3.0]);
    let report = evaluate_frontier(&config, &model, &[1.0, 2.0, 0.0, 3.0], 50, 0.01, Some(&[ANTIUTOPIA2; 2])).unwrap();
    assert_eq!(report.points.len(), 50);
    assert!(report.hypervolume.unwrap() > 0.0);
    assert!(report.area > 0.0);
    for k in 0..2 {
        assert!(report.points.iter().all(|p| p.j[k] >= report.j_min[k] && p.j[k] <= report.j_max[k]));
    }
    assert!(report.filtered <= report.points.len());
}

#[test]
fn latent_sweep_covers_the_boundary() {
    let line = latent_sweep(LatentDomain::Interval, 5);
    assert_eq!(line.first().unwrap(), &vec![0.0]);
    assert_eq!(line.last().unwrap(), &vec![1.0]);
    let tri = latent_sweep(LatentDomain::Simplex, 10);
    assert!(tri.len() >= 10);
    assert!(tri.iter().any(|t| t == &vec![0.0, 0.0]) && tri.iter().any(|t| t == &vec![1.0, 0.0]));
}

#[test]
fn mismatched_inputs_are_rejected() {
    let model = LqgModel::new(LqgSpec::standard(3)).unwrap();
    let config = lqg2_config(1.0, vec![1.0, 2.0, 0.0, 3.0]);
    assert!(gradient_j_rho(&config, &model, &[1.0, 2.0, 0.0, 3.0]).is_err());
    let model2 = LqgModel::new(LqgSpec::standard(2)).unwrap();
    assert!(gradient_j_rho(&config, &model2, &[1.0, 2.0]).is_err());
    let mut bad = config.clone();
    bad.quadrature.nodes = 0;
    assert!(bad.validate().is_err());
}
