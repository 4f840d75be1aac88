//! Water reservoir MOMDP with flooding and irrigation-deficit objectives.
//!
//! The state is the stored volume `s`. The policy releases
//! `a ~ N(ν(s)ᵀκ, σ²)`, the dynamics clip it to the admissible range
//! `[a̲, ā]`, and a stochastic inflow refills the reservoir afterwards.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PmgaError, Result};
use crate::estimators::{par_map, SampleBuilder, TrajectorySample, TrajectorySampler};
use crate::matcalc::{Mat, Vector};
use crate::rng::{stream_rng, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InflowModel {
    Deterministic { value: f64 },
    /// `exp(N(mu, sigma²))`.
    Lognormal { mu: f64, sigma: f64 },
    /// Uniform draws from a fixed list of observed inflows.
    Samples { values: Vec<f64> },
    /// Newline-separated samples read by [`InflowModel::resolve`].
    File { path: std::path::PathBuf },
}

impl Default for InflowModel {
    fn default() -> Self {
        InflowModel::Lognormal {
            mu: 40f64.ln(),
            sigma: 0.5,
        }
    }
}

impl InflowModel {
    /// Newline-separated inflow values.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let values = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|e| PmgaError::Config(format!("{}: bad inflow `{l}`: {e}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(PmgaError::Config(format!("{}: no inflow samples", path.display())));
        }
        Ok(InflowModel::Samples { values })
    }

    /// Loads a `File` model (relative to `base`) into `Samples`.
    pub fn resolve(self, base: &Path) -> Result<Self> {
        match self {
            InflowModel::File { path } => Self::from_file(&base.join(path)),
            other => Ok(other),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InflowModel::File { path } => Err(PmgaError::Config(format!(
                "inflow file {} has not been loaded",
                path.display()
            ))),
            InflowModel::Deterministic { value } if *value < 0.0 || !value.is_finite() => {
                Err(PmgaError::InvalidArgument("inflow must be a nonnegative number".into()))
            }
            InflowModel::Lognormal { sigma, mu } if !(*sigma >= 0.0) || !mu.is_finite() => {
                Err(PmgaError::InvalidArgument("lognormal inflow needs finite mu and sigma >= 0".into()))
            }
            InflowModel::Samples { values } if values.is_empty() || values.iter().any(|v| *v < 0.0) => {
                Err(PmgaError::InvalidArgument("inflow samples must be nonempty and nonnegative".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match self {
            InflowModel::Deterministic { value } => *value,
            InflowModel::Lognormal { mu, sigma } => LogNormal::new(*mu, *sigma).expect("validated").sample(rng),
            InflowModel::Samples { values } => values[rng.random_range(0..values.len())],
            InflowModel::File { .. } => panic!("inflow file not loaded"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservoirSpec {
    /// Reservoir surface `S`; the level is `h = s / S`.
    pub surface: f64,
    /// Flooding threshold `h̄`.
    pub flood_threshold: f64,
    /// Water demand `ρ̄`.
    pub demand: f64,
    pub gamma: f64,
    pub learn_episodes: usize,
    pub learn_steps: usize,
    pub eval_episodes: usize,
    pub eval_steps: usize,
    pub inflow: InflowModel,
    pub initial_states: Vec<f64>,
    /// Storage above this must be released: `a̲ = max(0, s − cap)`.
    pub storage_cap: f64,
    /// Add `−max(a − ā, a̲ − a, 0)` to both rewards.
    pub penalty: bool,
    /// Variance of the Gaussian action noise.
    pub policy_variance: f64,
    pub squared_rbf: bool,
}

impl Default for ReservoirSpec {
    fn default() -> Self {
        Self {
            surface: 1.0,
            flood_threshold: 50.0,
            demand: 50.0,
            gamma: 1.0,
            learn_episodes: 100,
            learn_steps: 100,
            eval_episodes: 100_000,
            eval_steps: 100,
            inflow: InflowModel::default(),
            initial_states: vec![0.0, 50.0, 120.0, 160.0],
            storage_cap: 160.0,
            penalty: false,
            policy_variance: 0.1,
            squared_rbf: false,
        }
    }
}

/// Result of one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next_state: f64,
    pub release: f64,
    pub flooding: f64,
    pub deficit: f64,
}

impl ReservoirSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.surface > 0.0 && self.flood_threshold > 0.0 && self.demand > 0.0) {
            return Err(PmgaError::InvalidArgument("surface, threshold and demand must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(PmgaError::InvalidArgument("discount must be in (0,1]".into()));
        }
        if self.learn_episodes == 0 || self.learn_steps == 0 || self.eval_episodes == 0 || self.eval_steps == 0 {
            return Err(PmgaError::InvalidArgument("episode and step counts must be positive".into()));
        }
        if self.initial_states.is_empty() || self.initial_states.iter().any(|s| *s < 0.0) {
            return Err(PmgaError::InvalidArgument("initial states must be nonempty and nonnegative".into()));
        }
        if !(self.policy_variance > 0.0) {
            return Err(PmgaError::InvalidArgument("policy variance must be positive".into()));
        }
        self.inflow.validate()
    }

    pub fn policy_std(&self) -> f64 {
        self.policy_variance.sqrt()
    }

    /// Admissible release range `(a̲, ā)` at storage `s`.
    pub fn release_bounds(&self, s: f64) -> (f64, f64) {
        ((s - self.storage_cap).max(0.0), s)
    }

    pub fn step(&self, s: f64, action: f64, inflow: f64) -> Transition {
        let (lo, hi) = self.release_bounds(s);
        let release = action.clamp(lo, hi);
        let next_state = s - release + inflow;
        let level = next_state / self.surface;
        let mut flooding = -(level - self.flood_threshold).max(0.0);
        let mut deficit = -(self.demand - release).max(0.0);
        if self.penalty {
            let p = -(action - hi).max(lo - action).max(0.0);
            flooding += p;
            deficit += p;
        }
        Transition {
            next_state,
            release,
            flooding,
            deficit,
        }
    }
}

pub const RBF_CENTERS: [f64; 4] = [0.0, 50.0, 120.0, 160.0];
pub const RBF_WIDTHS: [f64; 4] = [50.0, 20.0, 40.0, 50.0];

/// Gaussian policy on radial basis features plus a constant bias feature.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfPolicy {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    pub kappa: Vector,
    pub sigma: f64,
    pub squared: bool,
}

impl RbfPolicy {
    pub fn new(kappa: &[f64], sigma: f64, squared: bool) -> Result<Self> {
        if kappa.len() != RBF_CENTERS.len() + 1 {
            return Err(PmgaError::Dimension(format!(
                "RBF policy takes {} weights, got {}",
                RBF_CENTERS.len() + 1,
                kappa.len()
            )));
        }
        Ok(Self {
            centers: RBF_CENTERS.to_vec(),
            widths: RBF_WIDTHS.to_vec(),
            kappa: Vector::from_column_slice(kappa),
            sigma,
            squared,
        })
    }

    /// `ν(s) = [exp(−|s − c_i| / w_i)]_i ++ [1]`.
    pub fn features(&self, s: f64) -> Vector {
        let mut nu = Vector::from_element(self.centers.len() + 1, 1.0);
        for (i, (c, w)) in self.centers.iter().zip(&self.widths).enumerate() {
            let dist = (s - c).abs();
            let arg = if self.squared { dist * dist / (w * w) } else { dist / w };
            nu[i] = (-arg).exp();
        }
        nu
    }

    pub fn mean(&self, s: f64) -> f64 {
        self.features(s).dot(&self.kappa)
    }
}

/// Per-objective totals of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub releases: Vec<f64>,
    pub rewards: Vec<[f64; 2]>,
}

impl EpisodeRecord {
    pub fn total(&self, gamma: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        let mut disc = 1.0;
        for r in &self.rewards {
            out[0] += disc * r[0];
            out[1] += disc * r[1];
            disc *= gamma;
        }
        out
    }
}

fn run_episode(spec: &ReservoirSpec, policy: &RbfPolicy, steps: usize, rng: &mut StreamRng) -> EpisodeRecord {
    let mut s = spec.initial_states[rng.random_range(0..spec.initial_states.len())];
    let mut rec = EpisodeRecord {
        states: Vec::with_capacity(steps),
        actions: Vec::with_capacity(steps),
        releases: Vec::with_capacity(steps),
        rewards: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        let noise: f64 = rng.sample(StandardNormal);
        let a = policy.mean(s) + policy.sigma * noise;
        let inflow = spec.inflow.sample(rng);
        let tr = spec.step(s, a, inflow);
        rec.states.push(s);
        rec.actions.push(a);
        rec.releases.push(tr.release);
        rec.rewards.push([tr.flooding, tr.deficit]);
        s = tr.next_state;
    }
    rec
}

/// Episode `e` uses stream `e` of `seed`.
pub fn rollout(spec: &ReservoirSpec, policy: &RbfPolicy, episodes: usize, steps: usize, seed: u64) -> Result<Vec<EpisodeRecord>> {
    spec.validate()?;
    Ok(par_map(episodes, |e| {
        let mut rng = stream_rng(seed, e as u64);
        run_episode(spec, policy, steps, &mut rng)
    }))
}

/// Mean per-episode return over the evaluation budget.
pub fn evaluate_j(spec: &ReservoirSpec, policy: &RbfPolicy, seed: u64) -> Result<[f64; 2]> {
    evaluate_j_with(spec, policy, spec.eval_episodes, spec.eval_steps, seed)
}

pub fn evaluate_j_with(spec: &ReservoirSpec, policy: &RbfPolicy, episodes: usize, steps: usize, seed: u64) -> Result<[f64; 2]> {
    let eps = rollout(spec, policy, episodes, steps, seed)?;
    let mut j = [0.0; 2];
    for e in &eps {
        let t = e.total(spec.gamma);
        j[0] += t[0];
        j[1] += t[1];
    }
    Ok([j[0] / episodes as f64, j[1] / episodes as f64])
}

/// Reservoir as a trajectory source; `steps` fixes the episode length.
#[derive(Debug, Clone)]
pub struct ReservoirSampler {
    pub spec: ReservoirSpec,
    pub steps: usize,
}

impl ReservoirSampler {
    pub fn learning(spec: ReservoirSpec) -> Result<Self> {
        spec.validate()?;
        let steps = spec.learn_steps;
        Ok(Self { spec, steps })
    }

    pub fn evaluation(spec: ReservoirSpec) -> Result<Self> {
        spec.validate()?;
        let steps = spec.eval_steps;
        Ok(Self { spec, steps })
    }
}

impl TrajectorySampler for ReservoirSampler {
    fn n_objectives(&self) -> usize {
        2
    }

    fn theta_dim(&self) -> usize {
        RBF_CENTERS.len() + 1
    }

    fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    fn horizon(&self) -> usize {
        self.steps
    }

    fn sample(&self, theta: &[f64], rng: &mut StreamRng) -> Result<TrajectorySample> {
        let policy = RbfPolicy::new(theta, self.spec.policy_std(), self.spec.squared_rbf)?;
        let rec = run_episode(&self.spec, &policy, self.steps, rng);
        // Scalar Gaussian: ∇ log π = (a − μ) ν / σ², H log π = −ν νᵀ / σ².
        let d = self.theta_dim();
        let prec = 1.0 / (policy.sigma * policy.sigma);
        let mut b = SampleBuilder::new(2, d);
        let mut hess = Mat::zeros(d, d);
        let mut disc = 1.0;
        for ((s, a), r) in rec.states.iter().zip(&rec.actions).zip(&rec.rewards) {
            let nu = policy.features(*s);
            let grad = &nu * ((a - nu.dot(&policy.kappa)) * prec);
            hess.ger(-prec, &nu, &nu, 0.0);
            b.step(&grad, &hess, &[disc * r[0], disc * r[1]]);
            disc *= self.spec.gamma;
        }
        Ok(b.finish())
    }
}
