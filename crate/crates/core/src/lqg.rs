//! Multi-objective discrete-time LQG with uncoupled dynamics (`A = B = I`).
//!
//! Objective `i` penalizes the distance of state axis `i` from the origin and
//! the action spent on the other axes. A small `ξ` mixes in the remaining
//! terms so every `R_i` is positive definite. The closed-form return of a
//! linear Gaussian policy `a ~ N(K s, Σ)` comes from a discounted Lyapunov
//! equation; its first and second derivatives come from differentiating that
//! equation, and are the oracle the rest of the crate is checked against.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PmgaError, Result};
use crate::estimators::{GaussianPolicy, SampleBuilder, TrajectorySample, TrajectorySampler};
use crate::matcalc::{kron, vec, Mat, Vector};
use crate::numdiff;
use crate::rng::{stream_rng, StreamRng};

/// How policy parameters fill the gain matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainStructure {
    /// `θ = diag(K)`, d = n.
    #[default]
    Diagonal,
    /// `θ = vec(K)`, d = n².
    Full,
}

/// Form of the `ξ`-weighted own-action cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OwnActionCost {
    /// `ξ a_i²`.
    #[default]
    Squared,
    /// `ξ a_i`, linear.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqgSpec {
    pub n: usize,
    pub gamma: f64,
    pub xi: f64,
    pub sigma: Mat,
    pub s0: Vector,
    pub horizon: usize,
    pub gains: GainStructure,
    pub own_action: OwnActionCost,
}

impl LqgSpec {
    /// `γ = 0.9, ξ = 0.1, Σ = I, s0 = 10·1`, horizon 50.
    pub fn standard(n: usize) -> Self {
        Self {
            n,
            gamma: 0.9,
            xi: 0.1,
            sigma: Mat::identity(n, n),
            s0: Vector::from_element(n, 10.0),
            horizon: 50,
            gains: GainStructure::Diagonal,
            own_action: OwnActionCost::Squared,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(PmgaError::InvalidArgument("LQG dimension must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(PmgaError::InvalidArgument(format!("discount {} not in (0,1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(PmgaError::InvalidArgument(format!("xi {} not in [0,1]", self.xi)));
        }
        if self.sigma.shape() != (self.n, self.n) || self.s0.len() != self.n {
            return Err(PmgaError::Dimension("sigma must be n x n and s0 length n".into()));
        }
        if self.sigma.clone().cholesky().is_none() && self.sigma.norm() > 0.0 {
            return Err(PmgaError::InvalidArgument("sigma must be positive definite or zero".into()));
        }
        Ok(())
    }

    pub fn n_objectives(&self) -> usize {
        self.n
    }

    pub fn theta_dim(&self) -> usize {
        match self.gains {
            GainStructure::Diagonal => self.n,
            GainStructure::Full => self.n * self.n,
        }
    }

    /// `Q_i = (1−ξ) e_i e_iᵀ + ξ (I − e_i e_iᵀ)`.
    pub fn state_cost(&self, i: usize) -> Mat {
        Mat::from_fn(self.n, self.n, |r, c| match (r == c, r == i) {
            (true, true) => 1.0 - self.xi,
            (true, false) => self.xi,
            _ => 0.0,
        })
    }

    /// `R_i = (1−ξ)(I − e_i e_iᵀ) + ξ e_i e_iᵀ`; the `ξ` entry is dropped
    /// under the linear own-action cost.
    pub fn action_cost(&self, i: usize) -> Mat {
        let own = match self.own_action {
            OwnActionCost::Squared => self.xi,
            OwnActionCost::Linear => 0.0,
        };
        Mat::from_fn(self.n, self.n, |r, c| match (r == c, r == i) {
            (true, true) => own,
            (true, false) => 1.0 - self.xi,
            _ => 0.0,
        })
    }

    /// `r_i(s, a) = −(1−ξ)(s_i² + Σ_{j≠i} a_j²) − ξ(Σ_{j≠i} s_j² + c(a_i))`.
    pub fn reward(&self, i: usize, s: &[f64], a: &[f64]) -> f64 {
        let (mut own, mut cross) = (0.0, 0.0);
        for j in 0..self.n {
            if j == i {
                own += s[j] * s[j];
            } else {
                own += a[j] * a[j];
                cross += s[j] * s[j];
            }
        }
        let own_action = match self.own_action {
            OwnActionCost::Squared => a[i] * a[i],
            OwnActionCost::Linear => a[i],
        };
        -(1.0 - self.xi) * own - self.xi * (cross + own_action)
    }

    /// Gain matrix for policy parameters `θ`.
    pub fn gain(&self, theta: &[f64]) -> Result<Mat> {
        if theta.len() != self.theta_dim() {
            return Err(PmgaError::Dimension(format!(
                "LQG expects {} policy parameters, got {}",
                self.theta_dim(),
                theta.len()
            )));
        }
        Ok(match self.gains {
            GainStructure::Diagonal => Mat::from_diagonal(&Vector::from_column_slice(theta)),
            GainStructure::Full => Mat::from_column_slice(self.n, self.n, theta),
        })
    }

    /// `∂K/∂θ_m`.
    fn gain_basis(&self, m: usize) -> Mat {
        let mut e = Mat::zeros(self.n, self.n);
        match self.gains {
            GainStructure::Diagonal => e[(m, m)] = 1.0,
            GainStructure::Full => e[(m % self.n, m / self.n)] = 1.0,
        }
        e
    }

    /// Spectral radius of `sqrt(γ)(I + K)`.
    pub fn discounted_radius(&self, k: &Mat) -> f64 {
        let a = Mat::identity(self.n, self.n) + k;
        let radius = a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        self.gamma.sqrt() * radius
    }

    fn check_stable(&self, k: &Mat) -> Result<()> {
        let radius = self.discounted_radius(k);
        if !(radius < 1.0) {
            return Err(PmgaError::Unstable { radius });
        }
        Ok(())
    }
}

/// Exact return and derivatives at one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct LqgEvaluation {
    pub j: Vector,
    pub jacobian: Mat,
    /// Stacked per-objective Hessians, `qd × d`.
    pub hessian: Mat,
}

/// Derivatives by differentiating the Lyapunov equation, or by Richardson
/// extrapolation of finite differences of the closed-form return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    #[default]
    Analytic,
    Richardson,
}

/// Solver for `P = S + γ Aᵀ P A` with a fixed closed-loop matrix `A`.
struct Lyapunov {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl Lyapunov {
    fn new(a: &Mat, gamma: f64) -> Result<Self> {
        let n = a.nrows();
        let at = a.transpose();
        let op = Mat::identity(n * n, n * n) - kron(&at, &at) * gamma;
        let lu = op.lu();
        if !lu.is_invertible() {
            return Err(PmgaError::Unstable { radius: 1.0 });
        }
        Ok(Self { lu, n })
    }

    fn solve(&self, s: &Mat) -> Mat {
        let sol = self.lu.solve(&vec(s)).expect("checked invertible");
        let p = Mat::from_column_slice(self.n, self.n, sol.as_slice());
        (&p + p.transpose()) * 0.5
    }
}

fn sym(m: Mat) -> Mat {
    &m + m.transpose()
}

/// `J_i(K)` for every objective.
pub fn closed_form_j(spec: &LqgSpec, theta: &[f64]) -> Result<Vector> {
    spec.validate()?;
    let k = spec.gain(theta)?;
    spec.check_stable(&k)?;
    let ctx = Context::new(spec, &k)?;
    Ok(Vector::from_iterator(spec.n, (0..spec.n).map(|i| ctx.objective(i).value)))
}

pub fn closed_form_jacobian(spec: &LqgSpec, theta: &[f64]) -> Result<Mat> {
    Ok(evaluate(spec, theta, DerivativeMode::Analytic)?.jacobian)
}

pub fn closed_form_hessian(spec: &LqgSpec, theta: &[f64]) -> Result<Mat> {
    Ok(evaluate(spec, theta, DerivativeMode::Analytic)?.hessian)
}

/// Return, Jacobian and stacked Hessian at `θ`.
pub fn evaluate(spec: &LqgSpec, theta: &[f64], mode: DerivativeMode) -> Result<LqgEvaluation> {
    spec.validate()?;
    let k = spec.gain(theta)?;
    spec.check_stable(&k)?;
    let (q, d) = (spec.n_objectives(), spec.theta_dim());
    match mode {
        DerivativeMode::Analytic => {
            let ctx = Context::new(spec, &k)?;
            let mut j = Vector::zeros(q);
            let mut jacobian = Mat::zeros(q, d);
            let mut hessian = Mat::zeros(q * d, d);
            for i in 0..q {
                let obj = ctx.objective(i);
                j[i] = obj.value;
                let (g, h) = ctx.derivatives(i, &obj);
                jacobian.row_mut(i).copy_from(&g.transpose());
                hessian.view_mut((i * d, 0), (d, d)).copy_from(&h);
            }
            Ok(LqgEvaluation { j, jacobian, hessian })
        }
        DerivativeMode::Richardson => {
            let j = closed_form_j(spec, theta)?;
            let x = Vector::from_column_slice(theta);
            let mut jacobian = Mat::zeros(q, d);
            let mut hessian = Mat::zeros(q * d, d);
            // Steps stay well inside the stability region for any gain that passed the check.
            let h = 1e-3;
            for i in 0..q {
                let f = |v: &Vector| closed_form_j(spec, v.as_slice()).map(|j| j[i]).unwrap_or(f64::NAN);
                let g = numdiff::richardson_gradient(f, &x, h, 3);
                jacobian.row_mut(i).copy_from(&g.transpose());
                let hs = numdiff::richardson_hessian(f, &x, h * 10.0, 3);
                hessian.view_mut((i * d, 0), (d, d)).copy_from(&hs);
            }
            Ok(LqgEvaluation { j, jacobian, hessian })
        }
    }
}

struct Context<'a> {
    spec: &'a LqgSpec,
    k: Mat,
    a: Mat,
    lyap: Lyapunov,
    /// `s0 s0ᵀ + γΣ/(1−γ)`: `J_i = −tr(P_i M) − tr(Σ R_i)/(1−γ)` + linear part.
    weight: Mat,
    /// `(I − γA)⁻¹`, used by the linear own-action term.
    resolvent: Option<Mat>,
    basis: Vec<Mat>,
}

struct Objective {
    value: f64,
    r: Mat,
    p: Mat,
}

impl<'a> Context<'a> {
    fn new(spec: &'a LqgSpec, k: &Mat) -> Result<Self> {
        let n = spec.n;
        let a = Mat::identity(n, n) + k;
        let lyap = Lyapunov::new(&a, spec.gamma)?;
        let weight = &spec.s0 * spec.s0.transpose() + &spec.sigma * (spec.gamma / (1.0 - spec.gamma));
        let resolvent = match spec.own_action {
            OwnActionCost::Squared => None,
            OwnActionCost::Linear => Some(
                (Mat::identity(n, n) - &a * spec.gamma)
                    .try_inverse()
                    .ok_or(PmgaError::Unstable { radius: 1.0 })?,
            ),
        };
        let basis = (0..spec.theta_dim()).map(|m| spec.gain_basis(m)).collect();
        Ok(Self {
            spec,
            k: k.clone(),
            a,
            lyap,
            weight,
            resolvent,
            basis,
        })
    }

    fn objective(&self, i: usize) -> Objective {
        let spec = self.spec;
        let q = spec.state_cost(i);
        let r = spec.action_cost(i);
        let s = &q + self.k.transpose() * &r * &self.k;
        let p = self.lyap.solve(&s);
        let mut value = -(&p * &self.weight).trace() - (&spec.sigma * &r).trace() / (1.0 - spec.gamma);
        if let Some(w) = &self.resolvent {
            value += -spec.xi * (&self.k * w * &spec.s0)[i];
        }
        Objective { value, r, p }
    }

    /// Gradient and Hessian of objective `i` in `θ`.
    fn derivatives(&self, i: usize, obj: &Objective) -> (Vector, Mat) {
        let spec = self.spec;
        let gamma = spec.gamma;
        let d = self.basis.len();
        let rk = &obj.r * &self.k;
        let pa = &obj.p * &self.a;
        // P_m solves P_m = S_m + γ Aᵀ P_m A.
        let dp: Vec<Mat> = self
            .basis
            .iter()
            .map(|e| {
                let s_m = sym(e.transpose() * (&rk + &pa * gamma));
                self.lyap.solve(&s_m)
            })
            .collect();
        let mut grad = Vector::from_iterator(d, dp.iter().map(|pm| -(pm * &self.weight).trace()));
        let mut hess = Mat::zeros(d, d);
        for m in 0..d {
            for n in 0..=m {
                let (em, en) = (&self.basis[m], &self.basis[n]);
                let s_mn = sym(em.transpose() * &obj.r * en)
                    + (sym(em.transpose() * &dp[n] * &self.a)
                        + sym(en.transpose() * &dp[m] * &self.a)
                        + sym(em.transpose() * &obj.p * en))
                        * gamma;
                let pmn = self.lyap.solve(&s_mn);
                let v = -(pmn * &self.weight).trace();
                hess[(m, n)] = v;
                hess[(n, m)] = v;
            }
        }
        if let Some(w) = &self.resolvent {
            // f(θ) = −ξ e_iᵀ K W s0 with W = (I − γ(I+K))⁻¹.
            let coef = -spec.xi;
            let ws0 = w * &spec.s0;
            let kw = &self.k * w;
            for m in 0..d {
                let em = &self.basis[m];
                let we_m_ws0 = w * em * &ws0;
                grad[m] += coef * ((em * &ws0)[i] + gamma * (&kw * em * &ws0)[i]);
                for n in 0..=m {
                    let en = &self.basis[n];
                    let we_n_ws0 = w * en * &ws0;
                    let v = gamma * ((em * &we_n_ws0)[i] + (en * &we_m_ws0)[i])
                        + gamma * gamma * ((&kw * en * &we_m_ws0)[i] + (&kw * em * &we_n_ws0)[i]);
                    hess[(m, n)] += coef * v;
                    if n != m {
                        hess[(n, m)] += coef * v;
                    }
                }
            }
        }
        (grad, hess)
    }
}

/// One simulated step record.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vector,
    pub action: Vector,
    pub rewards: Vector,
}

pub type Trajectory = Vec<Step>;

fn gaussian_noise(rng: &mut StreamRng, chol_l: &Mat) -> Vector {
    let z = Vector::from_iterator(chol_l.nrows(), (0..chol_l.nrows()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    chol_l * z
}

fn noise_factor(sigma: &Mat) -> Mat {
    sigma
        .clone()
        .cholesky()
        .map(|c| c.l())
        .unwrap_or_else(|| Mat::zeros(sigma.nrows(), sigma.ncols()))
}

/// Roll out `a ~ N(K s, Σ)`, `s' = s + a`. Episode `e` uses stream `e` of `seed`.
pub fn simulate(spec: &LqgSpec, theta: &[f64], horizon: usize, episodes: usize, seed: u64) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    let k = spec.gain(theta)?;
    let l = noise_factor(&spec.sigma);
    let run = |e: usize| {
        let mut rng = stream_rng(seed, e as u64);
        let mut s = spec.s0.clone();
        let mut traj = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let a = &k * &s + gaussian_noise(&mut rng, &l);
            let rewards = Vector::from_iterator(spec.n, (0..spec.n).map(|i| spec.reward(i, s.as_slice(), a.as_slice())));
            let next = &s + &a;
            traj.push(Step { state: s, action: a, rewards });
            s = next;
        }
        traj
    };
    Ok(crate::estimators::par_map(episodes, run))
}

/// Discounted per-objective return of one trajectory, `Σ_k γ^{k-1} r_k`.
pub fn discounted_return(traj: &Trajectory, gamma: f64) -> Vector {
    let q = traj.first().map_or(0, |s| s.rewards.len());
    let mut total = Vector::zeros(q);
    let mut disc = 1.0;
    for step in traj {
        total += &step.rewards * disc;
        disc *= gamma;
    }
    total
}

/// LQG as a trajectory source for the likelihood-ratio estimators.
#[derive(Debug, Clone)]
pub struct LqgSampler {
    pub spec: LqgSpec,
}

impl LqgSampler {
    pub fn new(spec: LqgSpec) -> Result<Self> {
        spec.validate()?;
        if spec.sigma.clone().cholesky().is_none() {
            return Err(PmgaError::InvalidArgument(
                "likelihood-ratio estimation needs a positive definite policy covariance".into(),
            ));
        }
        Ok(Self { spec })
    }

    /// Parameter Jacobian of the mean action `K(θ) s`.
    fn mean_jacobian(&self, s: &Vector) -> Mat {
        let n = self.spec.n;
        match self.spec.gains {
            GainStructure::Diagonal => Mat::from_diagonal(s),
            // vec(K s) = (sᵀ ⊗ I) vec(K)
            GainStructure::Full => kron(&Mat::from_row_slice(1, n, s.as_slice()), &Mat::identity(n, n)),
        }
    }
}

impl TrajectorySampler for LqgSampler {
    fn n_objectives(&self) -> usize {
        self.spec.n
    }

    fn theta_dim(&self) -> usize {
        self.spec.theta_dim()
    }

    fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn sample(&self, theta: &[f64], rng: &mut StreamRng) -> Result<TrajectorySample> {
        let spec = &self.spec;
        let k = spec.gain(theta)?;
        let policy = GaussianPolicy::new(spec.sigma.clone())?;
        let l = noise_factor(&spec.sigma);
        let d = spec.theta_dim();
        let mut s = spec.s0.clone();
        let mut b = SampleBuilder::new(spec.n, d);
        let mut rewards = vec![0.0; spec.n];
        let mut disc = 1.0;
        for _ in 0..spec.horizon {
            let mean = &k * &s;
            let a = &mean + gaussian_noise(rng, &l);
            let phi = self.mean_jacobian(&s);
            for (i, r) in rewards.iter_mut().enumerate() {
                *r = disc * spec.reward(i, s.as_slice(), a.as_slice());
            }
            b.step(&policy.log_grad(&phi, &mean, &a), &policy.log_hessian(&phi), &rewards);
            disc *= spec.gamma;
            s += &a;
        }
        Ok(b.finish())
    }
}
