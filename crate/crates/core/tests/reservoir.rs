use std::io::Write;

use proptest::prelude::*;

use pmga::estimators::TrajectorySampler;
use pmga::reservoir::{evaluate_j_with, rollout, InflowModel, RbfPolicy, ReservoirSampler, ReservoirSpec};
use pmga::rng::stream_rng;

const KAPPA: [f64; 5] = [61.4317, -64.1980, 10.6159, -22.8306, 37.8708];

fn small_spec() -> ReservoirSpec {
    ReservoirSpec {
        eval_episodes: 50,
        eval_steps: 30,
        ..ReservoirSpec::default()
    }
}

proptest! {
    #[test]
    fn step_balances_mass_and_clips(s in 0.0..400.0f64, action in -100.0..500.0f64, inflow in 0.0..200.0f64, penalty in any::<bool>()) {
        let spec = ReservoirSpec { penalty, ..ReservoirSpec::default() };
        let tr = spec.step(s, action, inflow);
        let (lo, hi) = spec.release_bounds(s);
        prop_assert!(tr.release >= lo && tr.release <= hi);
        prop_assert!((tr.next_state - (s - tr.release + inflow)).abs() < 1e-9);
        prop_assert!(tr.next_state >= 0.0);
        prop_assert!(tr.flooding <= 0.0 && tr.deficit <= 0.0);
        if (lo..=hi).contains(&action) {
            prop_assert_eq!(tr.release, action);
        }
    }

    #[test]
    fn penalty_only_lowers_rewards(s in 0.0..400.0f64, action in -100.0..500.0f64, inflow in 0.0..200.0f64) {
        let plain = ReservoirSpec::default().step(s, action, inflow);
        let pen = ReservoirSpec { penalty: true, ..ReservoirSpec::default() }.step(s, action, inflow);
        prop_assert!(pen.flooding <= plain.flooding && pen.deficit <= plain.deficit);
        prop_assert_eq!(pen.next_state, plain.next_state);
    }
}

#[test]
fn deficit_and_flooding_examples() {
    let spec = ReservoirSpec::default();
    let dry = spec.step(20.0, 20.0, 0.0);
    assert_eq!(dry.deficit, -30.0);
    assert_eq!(dry.flooding, 0.0);
    let wet = spec.step(100.0, 0.0, 0.0);
    assert_eq!(wet.flooding, -50.0);
    assert_eq!(wet.deficit, -50.0);
    let overfull = spec.step(200.0, 0.0, 0.0);
    assert_eq!(overfull.release, 40.0);
}

#[test]
fn rollouts_are_reproducible_and_nonpositive() {
    let spec = small_spec();
    let policy = RbfPolicy::new(&KAPPA, spec.policy_std(), false).unwrap();
    let a = rollout(&spec, &policy, 8, 20, 5).unwrap();
    let b = rollout(&spec, &policy, 8, 20, 5).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|e| e.rewards.iter().all(|r| r[0] <= 0.0 && r[1] <= 0.0)));
    assert!(a.iter().all(|e| e.states.iter().all(|s| *s >= 0.0)));
    let j = evaluate_j_with(&spec, &policy, 8, 20, 5).unwrap();
    let mean0 = a.iter().map(|e| e.total(spec.gamma)[0]).sum::<f64>() / 8.0;
    assert!((j[0] - mean0).abs() < 1e-9);
}

#[test]
fn sampler_scores_are_finite_and_sized() {
    let sampler = ReservoirSampler::evaluation(small_spec()).unwrap();
    let mut rng = stream_rng(2, 0);
    let s = sampler.sample(&KAPPA, &mut rng).unwrap();
    assert_eq!(s.returns.len(), 2);
    assert_eq!(s.score.len(), 5);
    assert_eq!(s.score_hessian.shape(), (5, 5));
    assert!(s.score.iter().chain(s.score_hessian.iter()).all(|x| x.is_finite()));
    assert!(s.score_hessian.symmetric_eigen().eigenvalues.iter().all(|e| *e <= 1e-9));
}

#[test]
fn inflow_file_is_loaded_relative_to_base() {
    let dir = tempfile::tempdir().unwrap();
    let mut f = std::fs::File::create(dir.path().join("inflow.txt")).unwrap();
    writeln!(f, "10.5\n\n20\n").unwrap();
    let model = InflowModel::File { path: "inflow.txt".into() }.resolve(dir.path()).unwrap();
    assert_eq!(model, InflowModel::Samples { values: vec![10.5, 20.0] });
    std::fs::write(dir.path().join("bad.txt"), "abc\n").unwrap();
    assert!(InflowModel::File { path: "bad.txt".into() }.resolve(dir.path()).is_err());
    assert!(InflowModel::File { path: "x".into() }.validate().is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    for spec in [
        ReservoirSpec { policy_variance: 0.0, ..ReservoirSpec::default() },
        ReservoirSpec { gamma: 1.5, ..ReservoirSpec::default() },
        ReservoirSpec { initial_states: vec![], ..ReservoirSpec::default() },
        ReservoirSpec { inflow: InflowModel::Samples { values: vec![-1.0] }, ..ReservoirSpec::default() },
    ] {
        assert!(spec.validate().is_err());
    }
}
