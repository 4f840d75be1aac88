use approx::assert_relative_eq;
use proptest::prelude::*;

use pmga::estimators::{estimate, EstimatorOptions};
use pmga::lqg::{closed_form_hessian, closed_form_j, closed_form_jacobian, LqgSampler, LqgSpec};
use pmga::manifold::{LQG2_HIGH_GAIN, LQG2_LOW_GAIN};

fn stable_gains(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5..-0.05f64, n)
}

fn optimum(spec: &LqgSpec, i: usize) -> Vec<f64> {
    let d = spec.theta_dim();
    let mut theta = vec![-0.5; d];
    for _ in 0..30 {
        let g = closed_form_jacobian(spec, &theta).unwrap().row(i).transpose();
        let h = closed_form_hessian(spec, &theta).unwrap().view((i * d, 0), (d, d)).into_owned();
        let step = h.lu().solve(&g).unwrap();
        theta.iter_mut().zip(step.iter()).for_each(|(t, s)| *t -= s);
    }
    theta
}

#[test]
fn single_objective_optima_values() {
    let spec = LqgSpec::standard(2);
    let theta = optimum(&spec, 0);
    assert_relative_eq!(theta[0], -LQG2_HIGH_GAIN, epsilon = 1e-4);
    assert_relative_eq!(theta[1], -LQG2_LOW_GAIN, epsilon = 1e-4);
    let j = closed_form_j(&spec, &theta).unwrap();
    assert_relative_eq!(j[0], -152.37, epsilon = 0.01);
    assert_relative_eq!(j[1], -306.50, epsilon = 0.01);
    assert!(closed_form_jacobian(&spec, &theta).unwrap().row(0).amax() < 1e-6);
}

#[test]
fn estimated_jacobian_brackets_closed_form() {
    let spec = LqgSpec::standard(2);
    let theta = [-0.6, -0.4];
    let exact = closed_form_jacobian(&spec, &theta).unwrap();
    let sampler = LqgSampler::new(spec).unwrap();
    let est = estimate(&sampler, &theta, 20_000, 11, &EstimatorOptions::default()).unwrap();
    for (k, (e, x)) in est.jacobian.iter().zip(exact.iter()).enumerate() {
        let se = est.jacobian_se[k];
        assert!((e - x).abs() < 4.0 * se, "entry {k}: {e} vs {x} (se {se})");
    }
}

#[test]
fn unstable_and_malformed_inputs_are_errors() {
    let spec = LqgSpec::standard(2);
    assert!(closed_form_j(&spec, &[0.2, -0.5]).is_err());
    assert!(closed_form_j(&spec, &[-0.5]).is_err());
    let mut bad = LqgSpec::standard(2);
    bad.gamma = 1.0;
    assert!(closed_form_j(&bad, &[-0.5, -0.5]).is_err());
}

proptest! {
    #[test]
    fn hessian_blocks_are_symmetric(theta in stable_gains(3)) {
        let spec = LqgSpec::standard(3);
        let h = closed_form_hessian(&spec, &theta).unwrap();
        for i in 0..3 {
            let blk = h.view((3 * i, 0), (3, 3));
            prop_assert!((blk - blk.transpose()).amax() <= 1e-8 * blk.amax().max(1.0));
        }
    }

    #[test]
    fn returns_are_negative(theta in stable_gains(2)) {
        let j = closed_form_j(&LqgSpec::standard(2), &theta).unwrap();
        prop_assert!(j.iter().all(|x| *x < 0.0));
    }

    #[test]
    fn swapping_axes_swaps_objectives(a in -1.5..-0.05f64, b in -1.5..-0.05f64) {
        let spec = LqgSpec::standard(2);
        let j = closed_form_j(&spec, &[a, b]).unwrap();
        let s = closed_form_j(&spec, &[b, a]).unwrap();
        prop_assert!((j[0] - s[1]).abs() <= 1e-9 * j[0].abs());
        prop_assert!((j[1] - s[0]).abs() <= 1e-9 * j[1].abs());
    }
}
