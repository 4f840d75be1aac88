//! A tiny tabular MOMDP whose trajectory space can be enumerated exactly.
//!
//! Two states, two actions, two objectives and a softmax policy over
//! state-action features. With a short horizon every trajectory and its
//! probability can be listed, so expectations of estimator integrands are
//! computed exactly instead of sampled.

use rand::Rng;

use crate::error::{PmgaError, Result};
use crate::estimators::{Accumulator, EstimatorBounds, SampleBuilder, TrajectorySample, TrajectorySampler};
use crate::matcalc::{Mat, Vector};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMomdp {
    pub initial: [f64; 2],
    /// `transition[s][a][s']`.
    pub transition: [[[f64; 2]; 2]; 2],
    /// `reward[i][s][a]`.
    pub reward: [[[f64; 2]; 2]; 2],
    /// `features[s][a]`, length `d`.
    pub features: [[Vec<f64>; 2]; 2],
    pub gamma: f64,
    pub horizon: usize,
}

/// One enumerated trajectory.
#[derive(Debug, Clone)]
pub struct WeightedTrajectory {
    pub probability: f64,
    pub sample: TrajectorySample,
}

impl TabularMomdp {
    /// The fixture used throughout the tests: conflicting objectives,
    /// `γ = 0.9`, horizon 2, three policy parameters.
    pub fn two_state() -> Self {
        Self {
            initial: [0.6, 0.4],
            transition: [[[0.8, 0.2], [0.3, 0.7]], [[0.5, 0.5], [0.1, 0.9]]],
            reward: [[[1.0, 0.0], [0.2, 0.6]], [[0.0, 0.8], [0.5, -0.4]]],
            features: [
                [vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.5]],
                [vec![0.0, 0.0, 0.0], vec![0.0, 1.0, -1.0]],
            ],
            gamma: 0.9,
            horizon: 2,
        }
    }

    pub fn theta_dim(&self) -> usize {
        self.features[0][0].len()
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta_dim() {
            return Err(PmgaError::Dimension(format!(
                "tabular policy expects {} parameters, got {}",
                self.theta_dim(),
                theta.len()
            )));
        }
        Ok(())
    }

    fn feature(&self, s: usize, a: usize) -> Vector {
        Vector::from_column_slice(&self.features[s][a])
    }

    /// `π(·|s)`.
    pub fn policy(&self, theta: &[f64], s: usize) -> [f64; 2] {
        let th = Vector::from_column_slice(theta);
        let logits = [self.feature(s, 0).dot(&th), self.feature(s, 1).dot(&th)];
        let m = logits[0].max(logits[1]);
        let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
        let z = e[0] + e[1];
        [e[0] / z, e[1] / z]
    }

    /// `(∇ log π(a|s), H log π(a|s))`; the Hessian is `−Cov_π(φ(s,·))`.
    pub fn log_policy_derivatives(&self, theta: &[f64], s: usize, a: usize) -> (Vector, Mat) {
        let p = self.policy(theta, s);
        let f0 = self.feature(s, 0);
        let f1 = self.feature(s, 1);
        let mean = &f0 * p[0] + &f1 * p[1];
        let grad = self.feature(s, a) - &mean;
        let c0 = &f0 - &mean;
        let c1 = &f1 - &mean;
        let cov = &c0 * c0.transpose() * p[0] + &c1 * c1.transpose() * p[1];
        (grad, -cov)
    }

    /// Every state-action sequence of length `horizon` with its probability.
    pub fn enumerate(&self, theta: &[f64]) -> Result<Vec<WeightedTrajectory>> {
        self.check(theta)?;
        let h = self.horizon;
        let d = self.theta_dim();
        let mut out = Vec::new();
        // Each step picks a state and an action: 4^h sequences.
        for code in 0..(1usize << (2 * h)) {
            let mut prob = 1.0;
            let mut b = SampleBuilder::new(2, d);
            let mut prev: Option<(usize, usize)> = None;
            let mut disc = 1.0;
            for k in 0..h {
                let s = (code >> (2 * k)) & 1;
                let a = (code >> (2 * k + 1)) & 1;
                prob *= match prev {
                    None => self.initial[s],
                    Some((ps, pa)) => self.transition[ps][pa][s],
                };
                prob *= self.policy(theta, s)[a];
                let (g, hs) = self.log_policy_derivatives(theta, s, a);
                b.step(&g, &hs, &[disc * self.reward[0][s][a], disc * self.reward[1][s][a]]);
                disc *= self.gamma;
                prev = Some((s, a));
            }
            out.push(WeightedTrajectory {
                probability: prob,
                sample: b.finish(),
            });
        }
        Ok(out)
    }

    /// Exact `J(θ)` by enumeration.
    pub fn exact_j(&self, theta: &[f64]) -> Result<Vector> {
        Ok(self
            .enumerate(theta)?
            .iter()
            .fold(Vector::zeros(2), |acc, t| acc + &t.sample.returns * t.probability))
    }

    /// Exact expectation of the estimator integrands.
    pub fn exact_accumulator(&self, theta: &[f64]) -> Result<Accumulator> {
        let mut acc = Accumulator::new(2, self.theta_dim());
        for t in self.enumerate(theta)? {
            acc.push(&t.sample, None, t.probability);
        }
        Ok(acc)
    }

    /// Tight per-step bounds at `θ`: largest reward magnitude, largest score
    /// entry and largest score-Hessian entry.
    pub fn bounds(&self, theta: &[f64]) -> Result<EstimatorBounds> {
        self.check(theta)?;
        let r_bar = self.reward.iter().flatten().flatten().fold(0.0f64, |m, r| m.max(r.abs()));
        let (mut d_bar, mut g_bar) = (0.0f64, 0.0f64);
        for s in 0..2 {
            for a in 0..2 {
                let (g, h) = self.log_policy_derivatives(theta, s, a);
                d_bar = d_bar.max(g.amax());
                g_bar = g_bar.max(h.amax());
            }
        }
        Ok(EstimatorBounds {
            r_bar,
            d_bar,
            g_bar,
            gamma: self.gamma,
            horizon: self.horizon,
        })
    }
}

impl TrajectorySampler for TabularMomdp {
    fn n_objectives(&self) -> usize {
        2
    }

    fn theta_dim(&self) -> usize {
        TabularMomdp::theta_dim(self)
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn sample(&self, theta: &[f64], rng: &mut StreamRng) -> Result<TrajectorySample> {
        self.check(theta)?;
        let d = self.theta_dim();
        let mut s = usize::from(rng.random::<f64>() >= self.initial[0]);
        let mut b = SampleBuilder::new(2, d);
        let mut disc = 1.0;
        for _ in 0..self.horizon {
            let a = usize::from(rng.random::<f64>() >= self.policy(theta, s)[0]);
            let (g, h) = self.log_policy_derivatives(theta, s, a);
            b.step(&g, &h, &[disc * self.reward[0][s][a], disc * self.reward[1][s][a]]);
            disc *= self.gamma;
            s = usize::from(rng.random::<f64>() >= self.transition[s][a][0]);
        }
        Ok(b.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{estimate, EstimatorOptions};
    use crate::numdiff;
    use approx::assert_relative_eq;

    #[test]
    fn probabilities_sum_to_one() {
        let m = TabularMomdp::two_state();
        let total: f64 = m.enumerate(&[0.3, -0.5, 0.8]).unwrap().iter().map(|t| t.probability).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn exact_gradient_expectation_matches_finite_differences() {
        let m = TabularMomdp::two_state();
        let theta = [0.3, -0.5, 0.8];
        let est = m.exact_accumulator(&theta).unwrap().finish(false);
        let x = Vector::from_column_slice(&theta);
        for i in 0..2 {
            let f = |v: &Vector| m.exact_j(v.as_slice()).unwrap()[i];
            let g = numdiff::richardson_gradient(f, &x, 1e-2, 4);
            for n in 0..3 {
                assert!((est.jacobian[(i, n)] - g[n]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sampled_estimate_converges_to_exact() {
        let m = TabularMomdp::two_state();
        let theta = [0.3, -0.5, 0.8];
        let exact = m.exact_accumulator(&theta).unwrap().finish(true);
        let est = estimate(&m, &theta, 50_000, 4, &EstimatorOptions::default()).unwrap();
        for k in 0..exact.hessian.len() {
            let se = est.hessian_se.as_slice()[k];
            assert!((est.hessian.as_slice()[k] - exact.hessian.as_slice()[k]).abs() < 4.0 * se + 1e-12);
        }
    }

    #[test]
    fn per_trajectory_hessian_terms_respect_entry_bound() {
        let m = TabularMomdp::two_state();
        let theta = [0.3, -0.5, 0.8];
        let bound = crate::estimators::hessian_entry_bound(&m.bounds(&theta).unwrap()).unwrap();
        for t in m.enumerate(&theta).unwrap() {
            assert!(t.sample.hessian_term().amax() <= bound);
        }
    }
}
