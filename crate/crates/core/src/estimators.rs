//! Likelihood-ratio estimators of the return Jacobian and stacked Hessian.
//!
//! For a trajectory `τ` with per-objective return `r_i(τ)`, score
//! `g = Σ_k ∇ log π(a_k|s_k)` and score Hessian `G = Σ_k H log π(a_k|s_k)`:
//!
//! ```text
//! ∇J_i  = E[ r_i(τ) g ]
//! H J_i = E[ r_i(τ) (g gᵀ + G) ]
//! ```
//!
//! Both are plain sample means over trajectories drawn at the same `θ`.

use serde::{Deserialize, Serialize};

use crate::error::{PmgaError, Result};
use crate::matcalc::{Mat, Vector};
use crate::rng::{stream_rng, StreamRng};

/// Run `f(0..n)` and collect results in index order, in parallel when enabled.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Gaussian policy with a fixed covariance and a mean that is linear in `θ`,
/// `μ(s, θ) = Φ(s) θ`.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    precision: Mat,
}

impl GaussianPolicy {
    pub fn new(covariance: Mat) -> Result<Self> {
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| PmgaError::NonGaussianPolicy("covariance is not positive definite".into()))?;
        Ok(Self {
            precision: chol.inverse(),
        })
    }

    /// Scalar-action policy with standard deviation `sigma`.
    pub fn scalar(sigma: f64) -> Result<Self> {
        Self::new(Mat::from_element(1, 1, sigma * sigma))
    }

    /// `∇_θ log π(a|s) = Φᵀ Σ⁻¹ (a − μ)`.
    pub fn log_grad(&self, phi: &Mat, mean: &Vector, action: &Vector) -> Vector {
        phi.transpose() * (&self.precision * (action - mean))
    }

    /// `H_θ log π(a|s) = −Φᵀ Σ⁻¹ Φ`.
    pub fn log_hessian(&self, phi: &Mat) -> Mat {
        -(phi.transpose() * &self.precision * phi)
    }

    /// `log π(a|s)` up to the normalizing constant.
    pub fn log_density(&self, mean: &Vector, action: &Vector) -> f64 {
        let diff = action - mean;
        -0.5 * (diff.transpose() * &self.precision * &diff)[0]
    }
}

/// Sufficient statistics of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    /// `r_i(τ) = Σ_k γ^{k-1} r_{i,k}`.
    pub returns: Vector,
    /// `Σ_k ∇ log π(a_k|s_k, θ)`.
    pub score: Vector,
    /// `Σ_k H log π(a_k|s_k, θ)`.
    pub score_hessian: Mat,
    /// Per-step terms, when the domain records them.
    pub causal: Option<CausalTerms>,
}

/// Each discounted reward `γ^{k-1} r_k` weighted only by the policy
/// derivatives of the actions up to step `k`: row `i` of `jacobian` is
/// `Σ_k γ^{k-1} r_{i,k} c_kᵀ` and block `i` of `hessian` is
/// `Σ_k γ^{k-1} r_{i,k} (c_k c_kᵀ + C_k)`, with `c_k`, `C_k` the running
/// sums of `∇ log π` and `H log π`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalTerms {
    pub jacobian: Mat,
    pub hessian: Mat,
}

/// Builds a [`TrajectorySample`] one step at a time.
#[derive(Debug, Clone)]
pub struct SampleBuilder {
    returns: Vector,
    score: Vector,
    score_hessian: Mat,
    jacobian: Mat,
    hessian: Mat,
    inner: Mat,
}

impl SampleBuilder {
    pub fn new(q: usize, d: usize) -> Self {
        Self {
            returns: Vector::zeros(q),
            score: Vector::zeros(d),
            score_hessian: Mat::zeros(d, d),
            jacobian: Mat::zeros(q, d),
            hessian: Mat::zeros(q * d, d),
            inner: Mat::zeros(d, d),
        }
    }

    /// Adds one step: the log-policy gradient and Hessian of the action taken
    /// and the discounted rewards it earned.
    pub fn step(&mut self, log_grad: &Vector, log_hessian: &Mat, rewards: &[f64]) {
        self.score += log_grad;
        self.score_hessian += log_hessian;
        self.inner.copy_from(&self.score_hessian);
        self.inner.ger(1.0, &self.score, &self.score, 1.0);
        let d = self.score.len();
        for (i, r) in rewards.iter().enumerate() {
            self.returns[i] += r;
            for m in 0..d {
                self.jacobian[(i, m)] += r * self.score[m];
                for n in 0..d {
                    self.hessian[(i * d + m, n)] += r * self.inner[(m, n)];
                }
            }
        }
    }

    pub fn finish(self) -> TrajectorySample {
        TrajectorySample {
            returns: self.returns,
            score: self.score,
            score_hessian: self.score_hessian,
            causal: Some(CausalTerms {
                jacobian: self.jacobian,
                hessian: self.hessian,
            }),
        }
    }
}

impl TrajectorySample {
    /// Row `i` is `r_i g ᵀ`.
    pub fn jacobian_term(&self) -> Mat {
        &self.returns * self.score.transpose()
    }

    /// Block `i` is `r_i (g gᵀ + G)`.
    pub fn hessian_term(&self) -> Mat {
        let (q, d) = (self.returns.len(), self.score.len());
        let inner = &self.score * self.score.transpose() + &self.score_hessian;
        let mut out = Mat::zeros(q * d, d);
        for i in 0..q {
            out.view_mut((i * d, 0), (d, d)).copy_from(&(&inner * self.returns[i]));
        }
        out
    }
}

/// An episodic multi-objective domain driven by a policy with parameters `θ`.
pub trait TrajectorySampler: Sync {
    fn n_objectives(&self) -> usize;
    fn theta_dim(&self) -> usize;
    fn gamma(&self) -> f64;
    fn horizon(&self) -> usize;
    fn sample(&self, theta: &[f64], rng: &mut StreamRng) -> Result<TrajectorySample>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Plain likelihood-ratio estimator.
    #[default]
    None,
    /// Subtract the batch-mean return per objective (variance reduction, slightly biased).
    MeanReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub baseline: Baseline,
    /// Use the per-step terms of [`CausalTerms`] instead of whole-trajectory
    /// returns; incompatible with a baseline.
    #[serde(default)]
    pub causal: bool,
    /// Replace each Hessian block by `½(Ĥ + Ĥᵀ)` after averaging.
    pub symmetrize: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            baseline: Baseline::None,
            causal: false,
            symmetrize: true,
        }
    }
}

/// Running sums of per-trajectory terms; merging accumulators is exact
/// up to floating-point associativity.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    pub count: f64,
    pub returns: Vector,
    pub returns_sq: Vector,
    pub jacobian: Mat,
    pub jacobian_sq: Mat,
    pub hessian: Mat,
    pub hessian_sq: Mat,
}

impl Accumulator {
    pub fn new(q: usize, d: usize) -> Self {
        Self {
            count: 0.0,
            returns: Vector::zeros(q),
            returns_sq: Vector::zeros(q),
            jacobian: Mat::zeros(q, d),
            jacobian_sq: Mat::zeros(q, d),
            hessian: Mat::zeros(q * d, d),
            hessian_sq: Mat::zeros(q * d, d),
        }
    }

    /// Add one trajectory with probability weight `w` (1 for Monte Carlo draws).
    pub fn push(&mut self, sample: &TrajectorySample, baseline: Option<&Vector>, w: f64) {
        let shifted;
        let s = match baseline {
            Some(b) => {
                shifted = TrajectorySample {
                    returns: &sample.returns - b,
                    ..sample.clone()
                };
                &shifted
            }
            None => sample,
        };
        self.push_terms(&sample.returns, s.jacobian_term(), s.hessian_term(), w);
    }

    /// Add one trajectory through its per-step terms.
    pub fn push_causal(&mut self, sample: &TrajectorySample, w: f64) -> Result<()> {
        let c = sample
            .causal
            .as_ref()
            .ok_or_else(|| PmgaError::InvalidArgument("the domain does not record per-step terms".into()))?;
        self.push_terms(&sample.returns, c.jacobian.clone(), c.hessian.clone(), w);
        Ok(())
    }

    fn push_terms(&mut self, returns: &Vector, jt: Mat, ht: Mat, w: f64) {
        self.count += w;
        self.returns += returns * w;
        self.returns_sq += returns.component_mul(returns) * w;
        self.jacobian_sq += jt.component_mul(&jt) * w;
        self.jacobian += jt * w;
        self.hessian_sq += ht.component_mul(&ht) * w;
        self.hessian += ht * w;
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.count += other.count;
        self.returns += &other.returns;
        self.returns_sq += &other.returns_sq;
        self.jacobian += &other.jacobian;
        self.jacobian_sq += &other.jacobian_sq;
        self.hessian += &other.hessian;
        self.hessian_sq += &other.hessian_sq;
    }

    pub fn finish(&self, symmetrize: bool) -> Estimate {
        let n = self.count;
        let mean = |s: &Mat| s / n;
        let se = |s: &Mat, sq: &Mat| {
            let m = s / n;
            let var = (sq / n - m.component_mul(&m)).map(|v| v.max(0.0));
            // Unbiased sample variance scaled to the standard error of the mean.
            let scale = if n > 1.0 { n / (n - 1.0) / n } else { 0.0 };
            var.map(|v| (v * scale).sqrt())
        };
        let q = self.returns.len();
        let d = self.jacobian.ncols();
        let mut hessian = mean(&self.hessian);
        if symmetrize {
            for i in 0..q {
                let blk = hessian.view((i * d, 0), (d, d)).into_owned();
                hessian.view_mut((i * d, 0), (d, d)).copy_from(&((&blk + blk.transpose()) * 0.5));
            }
        }
        let returns_mat = Mat::from_column_slice(q, 1, self.returns.as_slice());
        let returns_sq_mat = Mat::from_column_slice(q, 1, self.returns_sq.as_slice());
        Estimate {
            n: n as usize,
            returns: &self.returns / n,
            returns_se: Vector::from_column_slice(se(&returns_mat, &returns_sq_mat).as_slice()),
            jacobian: mean(&self.jacobian),
            jacobian_se: se(&self.jacobian, &self.jacobian_sq),
            hessian,
            hessian_se: se(&self.hessian, &self.hessian_sq),
        }
    }
}

/// Sample means with per-entry standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub n: usize,
    pub returns: Vector,
    pub returns_se: Vector,
    pub jacobian: Mat,
    pub jacobian_se: Mat,
    pub hessian: Mat,
    pub hessian_se: Mat,
}

/// Draw `n` trajectories (stream `k` of `seed` for trajectory `k`) and reduce
/// them in index order.
pub fn accumulate<S: TrajectorySampler + ?Sized>(
    domain: &S,
    theta: &[f64],
    n: usize,
    seed: u64,
    options: &EstimatorOptions,
) -> Result<Accumulator> {
    if n == 0 {
        return Err(PmgaError::InvalidArgument("need at least one trajectory".into()));
    }
    if theta.len() != domain.theta_dim() {
        return Err(PmgaError::Dimension(format!(
            "domain expects {} policy parameters, got {}",
            domain.theta_dim(),
            theta.len()
        )));
    }
    let samples = par_map(n, |k| {
        let mut rng = stream_rng(seed, k as u64);
        domain.sample(theta, &mut rng)
    });
    let samples: Vec<TrajectorySample> = samples.into_iter().collect::<Result<_>>()?;
    let mut acc = Accumulator::new(domain.n_objectives(), domain.theta_dim());
    if options.causal {
        if options.baseline != Baseline::None {
            return Err(PmgaError::InvalidArgument("per-step estimation takes no baseline".into()));
        }
        for s in &samples {
            acc.push_causal(s, 1.0)?;
        }
        return Ok(acc);
    }
    let baseline = match options.baseline {
        Baseline::None => None,
        Baseline::MeanReturn => {
            let mut b = Vector::zeros(domain.n_objectives());
            for s in &samples {
                b += &s.returns;
            }
            Some(b / n as f64)
        }
    };
    for s in &samples {
        acc.push(s, baseline.as_ref(), 1.0);
    }
    Ok(acc)
}

pub fn estimate<S: TrajectorySampler + ?Sized>(
    domain: &S,
    theta: &[f64],
    n: usize,
    seed: u64,
    options: &EstimatorOptions,
) -> Result<Estimate> {
    Ok(accumulate(domain, theta, n, seed, options)?.finish(options.symmetrize))
}

/// Pooled estimate over several seeds, merged in seed order.
pub fn estimate_pooled<S: TrajectorySampler + ?Sized>(
    domain: &S,
    theta: &[f64],
    n_per_seed: usize,
    seeds: &[u64],
    options: &EstimatorOptions,
) -> Result<Estimate> {
    let mut total = Accumulator::new(domain.n_objectives(), domain.theta_dim());
    for &seed in seeds {
        total.merge(&accumulate(domain, theta, n_per_seed, seed, options)?);
    }
    Ok(total.finish(options.symmetrize))
}

pub fn estimate_jacobian<S: TrajectorySampler + ?Sized>(domain: &S, theta: &[f64], n: usize, seed: u64) -> Result<Mat> {
    Ok(estimate(domain, theta, n, seed, &EstimatorOptions::default())?.jacobian)
}

pub fn estimate_hessian<S: TrajectorySampler + ?Sized>(domain: &S, theta: &[f64], n: usize, seed: u64) -> Result<Mat> {
    Ok(estimate(domain, theta, n, seed, &EstimatorOptions::default())?.hessian)
}

/// Constants bounding rewards and policy log-derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorBounds {
    /// Per-step reward bound `R̄_i`.
    pub r_bar: f64,
    /// Bound on `|∂ log π / ∂θ_m|`.
    pub d_bar: f64,
    /// Bound on `|∂² log π / ∂θ_m ∂θ_n|`.
    pub g_bar: f64,
    pub gamma: f64,
    pub horizon: usize,
}

impl EstimatorBounds {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(PmgaError::InvalidArgument(format!(
                "the Hessian bound needs a discount in (0,1), got {}",
                self.gamma
            )));
        }
        if self.r_bar < 0.0 || self.d_bar < 0.0 || self.g_bar < 0.0 || self.horizon == 0 {
            return Err(PmgaError::InvalidArgument("bounds must be nonnegative with a positive horizon".into()));
        }
        Ok(())
    }
}

/// `‖H J_i‖_max ≤ R̄_i H γ^H / (1−γ) · (H D̄² + Ḡ)`.
pub fn hessian_entry_bound(bounds: &EstimatorBounds) -> Result<f64> {
    bounds.validate()?;
    let h = bounds.horizon as f64;
    Ok(bounds.r_bar * h * bounds.gamma.powi(bounds.horizon as i32) / (1.0 - bounds.gamma)
        * (h * bounds.d_bar * bounds.d_bar + bounds.g_bar))
}

/// Trajectories needed for `‖Ĥ_i − H_i‖_max ≤ ε` with probability `1 − δ`:
/// `N = ⌈ B² log(2/δ) / (2ε²) ⌉`, at least one.
pub fn hessian_sample_count(bounds: &EstimatorBounds, epsilon: f64, delta: f64) -> Result<u64> {
    if !(epsilon > 0.0) {
        return Err(PmgaError::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PmgaError::InvalidArgument(format!("delta must be in (0,1), got {delta}")));
    }
    let raw = hessian_sample_count_raw(bounds, epsilon, delta)?;
    Ok((raw.ceil() as u64).max(1))
}

/// The sample count before rounding.
pub fn hessian_sample_count_raw(bounds: &EstimatorBounds, epsilon: f64, delta: f64) -> Result<f64> {
    let b = hessian_entry_bound(bounds)?;
    Ok(b * b * (2.0 / delta).ln() / (2.0 * epsilon * epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqg::{evaluate, DerivativeMode, LqgSampler, LqgSpec};
    use crate::numdiff;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn unit_bounds() -> EstimatorBounds {
        EstimatorBounds {
            r_bar: 1.0,
            d_bar: 1.0,
            g_bar: 1.0,
            gamma: 0.5,
            horizon: 2,
        }
    }

    #[test]
    fn bound_arithmetic() {
        assert_relative_eq!(hessian_entry_bound(&unit_bounds()).unwrap(), 3.0, epsilon = 1e-15);
        let zero = EstimatorBounds {
            d_bar: 0.0,
            g_bar: 0.0,
            ..unit_bounds()
        };
        assert_eq!(hessian_entry_bound(&zero).unwrap(), 0.0);
        let base = hessian_entry_bound(&unit_bounds()).unwrap();
        for tweak in [
            EstimatorBounds { r_bar: 2.0, ..unit_bounds() },
            EstimatorBounds { d_bar: 2.0, ..unit_bounds() },
            EstimatorBounds { g_bar: 2.0, ..unit_bounds() },
        ] {
            assert!(hessian_entry_bound(&tweak).unwrap() > base);
        }
        let undiscounted = EstimatorBounds { gamma: 1.0, ..unit_bounds() };
        assert!(hessian_entry_bound(&undiscounted).is_err());
    }

    #[test]
    fn sample_count_arithmetic() {
        assert_eq!(hessian_sample_count(&unit_bounds(), 0.1, 0.1).unwrap(), 1349);
        assert_eq!(hessian_sample_count(&unit_bounds(), 1e9, 0.1).unwrap(), 1);
        let a = hessian_sample_count_raw(&unit_bounds(), 0.2, 0.1).unwrap();
        let b = hessian_sample_count_raw(&unit_bounds(), 0.1, 0.1).unwrap();
        assert_relative_eq!(b / a, 4.0, max_relative = 1e-12);
        assert!(hessian_sample_count(&unit_bounds(), 0.0, 0.1).is_err());
        assert!(hessian_sample_count(&unit_bounds(), 0.1, 1.0).is_err());
    }

    #[test]
    fn gaussian_log_derivatives() {
        let policy = GaussianPolicy::new(Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5])).unwrap();
        let mut rng = stream_rng(2, 0);
        for _ in 0..20 {
            let s = Vector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let a = Vector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let theta = Vector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let phi = crate::matcalc::kron(&Mat::from_row_slice(1, 2, s.as_slice()), &Mat::identity(2, 2));
            let logp = |th: &Vector| policy.log_density(&(&phi * th), &a);
            let g = numdiff::central_gradient(logp, &theta, 1e-6);
            let an = policy.log_grad(&phi, &(&phi * &theta), &a);
            assert!(numdiff::max_relative_error(an.as_slice(), g.as_slice(), 1e-3) < 1e-5);
            let h = numdiff::central_hessian(logp, &theta, 1e-4);
            let hn = policy.log_hessian(&phi);
            assert!(numdiff::max_relative_error(hn.as_slice(), h.as_slice(), 1e-2) < 1e-5);
            // The mode has zero score.
            assert_eq!(policy.log_grad(&phi, &(&phi * &theta), &(&phi * &theta)).norm(), 0.0);
        }
        assert!(GaussianPolicy::new(Mat::zeros(1, 1)).is_err());
    }

    #[test]
    fn estimates_are_deterministic_and_mergeable() {
        let domain = LqgSampler::new(LqgSpec::standard(2)).unwrap();
        let theta = [-0.6, -0.4];
        let opts = EstimatorOptions::default();
        let a = estimate(&domain, &theta, 200, 17, &opts).unwrap();
        let b = estimate(&domain, &theta, 200, 17, &opts).unwrap();
        assert_eq!(a, b);
        let seeds = [1u64, 2, 3];
        let pooled = estimate_pooled(&domain, &theta, 100, &seeds, &opts).unwrap();
        let parts: Vec<Estimate> = seeds.iter().map(|&s| estimate(&domain, &theta, 100, s, &opts).unwrap()).collect();
        let weighted = parts.iter().fold(Mat::zeros(4, 2), |acc, e| acc + &e.hessian * (1.0 / 3.0));
        assert!(numdiff::max_relative_error(pooled.hessian.as_slice(), weighted.as_slice(), 1e-9) < 1e-12);
        assert_eq!(pooled.n, 300);
    }

    #[test]
    fn lqg_estimates_agree_with_closed_form() {
        let spec = LqgSpec::standard(2);
        let domain = LqgSampler::new(spec.clone()).unwrap();
        let theta = [-0.55, -0.35];
        let exact = evaluate(&spec, &theta, DerivativeMode::Analytic).unwrap();
        let est = estimate(&domain, &theta, 20_000, 5, &EstimatorOptions::default()).unwrap();
        for (k, (&e, &x)) in est.jacobian.iter().zip(exact.jacobian.iter()).enumerate() {
            let se = est.jacobian_se.as_slice()[k];
            assert!((e - x).abs() < 4.0 * se, "jacobian {k}: {e} vs {x} (se {se})");
        }
        for (k, (&e, &x)) in est.hessian.iter().zip(exact.hessian.iter()).enumerate() {
            let se = est.hessian_se.as_slice()[k];
            assert!((e - x).abs() < 4.0 * se, "hessian {k}: {e} vs {x} (se {se})");
        }
    }

    #[test]
    fn standard_error_halves_when_samples_quadruple() {
        let domain = LqgSampler::new(LqgSpec::standard(2)).unwrap();
        let theta = [-0.55, -0.35];
        let opts = EstimatorOptions::default();
        let small = estimate(&domain, &theta, 2_000, 8, &opts).unwrap();
        let large = estimate(&domain, &theta, 8_000, 9, &opts).unwrap();
        let ratio = small.jacobian_se[(0, 0)] / large.jacobian_se[(0, 0)];
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }
}
