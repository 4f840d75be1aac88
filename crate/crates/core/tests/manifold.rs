use std::sync::Arc;

use proptest::prelude::*;

use pmga::manifold::{
    d2_phi_drho_dt, d_phi_drho, d_phi_dt, lqg2_pinned, phi, reservoir_quadratic, sample_latent, LatentDomain,
    MapRegistry, ParametricMap, QuadratureMode,
};
use pmga::numdiff::richardson_gradient;
use pmga::Vector;

const STEP: f64 = 1e-3;

fn latent(domain: LatentDomain) -> BoxedStrategy<Vec<f64>> {
    match domain {
        LatentDomain::Interval => (0.05..0.95f64).prop_map(|t| vec![t]).boxed(),
        LatentDomain::Simplex => (0.05..0.9f64, 0.05..0.9f64)
            .prop_filter("inside", |(a, b)| a + b < 0.95)
            .prop_map(|(a, b)| vec![a, b])
            .boxed(),
    }
}

fn map_point() -> impl Strategy<Value = (Arc<dyn ParametricMap>, Vec<f64>, Vec<f64>)> {
    let registry = MapRegistry::builtin();
    let maps: Vec<Arc<dyn ParametricMap>> = registry
        .ids()
        .filter(|id| *id != "lqg2_pinned_reciprocal")
        .map(|id| registry.get(id).unwrap())
        .collect();
    prop::sample::select(maps).prop_flat_map(|map| {
        let rho = prop::collection::vec(-1.0..1.0f64, map.rho_dim());
        let t = latent(map.domain());
        (Just(map), rho, t)
    })
}

fn close(a: &[f64], b: &[f64], rtol: f64) -> bool {
    let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rtol * scale)
}

proptest! {
    #[test]
    fn latent_jacobian_matches_differences((map, rho, t) in map_point()) {
        let jac = d_phi_dt(&*map, &rho, &t).unwrap();
        for k in 0..map.theta_dim() {
            let fd = richardson_gradient(|s: &Vector| phi(&*map, &rho, s.as_slice()).unwrap()[k], &Vector::from_column_slice(&t), STEP, 3);
            let row: Vec<f64> = jac.row(k).iter().copied().collect();
            prop_assert!(close(&row, fd.as_slice(), 1e-7), "{} theta_{k}", map.id());
        }
    }

    #[test]
    fn parameter_gradient_matches_differences((map, rho, t) in map_point()) {
        for i in 0..rho.len() {
            let analytic = d_phi_drho(&*map, &rho, &t, i).unwrap();
            for k in 0..map.theta_dim() {
                let fd = richardson_gradient(
                    |r: &Vector| phi(&*map, r.as_slice(), &t).unwrap()[k],
                    &Vector::from_column_slice(&rho),
                    STEP,
                    3,
                );
                prop_assert!(close(&[analytic[k]], &[fd[i]], 1e-7), "{} rho_{i} theta_{k}", map.id());
            }
        }
    }

    #[test]
    fn mixed_derivative_matches_differences((map, rho, t) in map_point()) {
        for i in 0..rho.len() {
            let mixed = d2_phi_drho_dt(&*map, &rho, &t, i).unwrap();
            for k in 0..map.theta_dim() {
                for j in 0..t.len() {
                    let fd = richardson_gradient(
                        |r: &Vector| d_phi_dt(&*map, r.as_slice(), &t).unwrap()[(k, j)],
                        &Vector::from_column_slice(&rho),
                        STEP,
                        3,
                    );
                    prop_assert!(close(&[mixed[(k, j)]], &[fd[i]], 1e-7), "{} rho_{i}", map.id());
                }
            }
        }
    }

    #[test]
    fn pinned_maps_keep_their_endpoints(r1 in -3.0..3.0f64, r2 in -3.0..3.0f64, rr in prop::collection::vec(-50.0..50.0f64, 5)) {
        let pinned = lqg2_pinned();
        for t in [0.0, 1.0] {
            let a = phi(&pinned, &[r1, r2], &[t]).unwrap();
            let b = phi(&pinned, &[0.0, 0.0], &[t]).unwrap();
            prop_assert!((a - b).amax() < 1e-12);
        }
        let reservoir = reservoir_quadratic();
        for t in [0.0, 1.0] {
            let a = phi(&reservoir, &rr, &[t]).unwrap();
            let b = phi(&reservoir, &[0.0; 5], &[t]).unwrap();
            prop_assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn quadrature_weights_sum_to_measure(n in 1usize..200, seed in any::<u64>(), simplex in any::<bool>(), grid in any::<bool>()) {
        let domain = if simplex { LatentDomain::Simplex } else { LatentDomain::Interval };
        let mode = if grid { QuadratureMode::Grid } else { QuadratureMode::MonteCarlo };
        let q = sample_latent(domain, n, mode, seed).unwrap();
        prop_assert!(!q.is_empty());
        prop_assert!((q.weights.iter().sum::<f64>() - domain.measure()).abs() < 1e-12);
        prop_assert!(q.points.iter().all(|t| domain.contains(t)));
    }
}

#[test]
fn pinned_map_reaches_the_single_objective_gains() {
    let map = lqg2_pinned();
    let start = phi(&map, &[0.7, -0.4], &[0.0]).unwrap();
    let end = phi(&map, &[0.7, -0.4], &[1.0]).unwrap();
    assert!((start[0] + 0.2403).abs() < 1e-12 && (start[1] + 0.8991).abs() < 1e-12);
    assert!((end[0] + 0.8991).abs() < 1e-12 && (end[1] + 0.2403).abs() < 1e-12);
}

#[test]
fn monte_carlo_nodes_depend_only_on_seed() {
    let a = sample_latent(LatentDomain::Simplex, 50, QuadratureMode::MonteCarlo, 3).unwrap();
    let b = sample_latent(LatentDomain::Simplex, 50, QuadratureMode::MonteCarlo, 3).unwrap();
    let c = sample_latent(LatentDomain::Simplex, 50, QuadratureMode::MonteCarlo, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn simplex_grid_rounds_to_a_square() {
    let q = sample_latent(LatentDomain::Simplex, 50, QuadratureMode::Grid, 0).unwrap();
    assert_eq!(q.len(), 49);
}

#[test]
fn bad_inputs_are_rejected() {
    let map = lqg2_pinned();
    assert!(phi(&map, &[0.0], &[0.5]).is_err());
    assert!(phi(&map, &[0.0, f64::NAN], &[0.5]).is_err());
    assert!(phi(&map, &[0.0, 0.0], &[1.5]).is_err());
    assert!(d_phi_drho(&map, &[0.0, 0.0], &[0.5], 2).is_err());
    assert!(MapRegistry::builtin().get("no_such_map").is_err());
    assert!(sample_latent(LatentDomain::Interval, 0, QuadratureMode::Grid, 0).is_err());
}
