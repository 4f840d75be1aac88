//! Parametric maps `φ_ρ : T ⊂ Rᵇ → Rᵈ` from a latent domain into policy
//! parameters, with the derivative objects the frontier gradient needs:
//! `D_t φ`, `D_ρi φ` and `D_ρi (D_t φ)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PmgaError, Result};
use crate::matcalc::{Mat, Vector};
use crate::rng::stream_rng;

const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentDomain {
    /// `[0, 1]`, b = 1.
    Interval,
    /// `{t ∈ [0,1]² : t1 + t2 ≤ 1}`, b = 2.
    Simplex,
}

impl LatentDomain {
    pub fn dim(self) -> usize {
        match self {
            LatentDomain::Interval => 1,
            LatentDomain::Simplex => 2,
        }
    }

    pub fn measure(self) -> f64 {
        match self {
            LatentDomain::Interval => 1.0,
            LatentDomain::Simplex => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LatentDomain::Interval => "interval",
            LatentDomain::Simplex => "simplex",
        }
    }

    pub fn contains(self, t: &[f64]) -> bool {
        if t.len() != self.dim() || t.iter().any(|x| !x.is_finite()) {
            return false;
        }
        match self {
            LatentDomain::Interval => t[0] >= -DOMAIN_SLACK && t[0] <= 1.0 + DOMAIN_SLACK,
            LatentDomain::Simplex => {
                t[0] >= -DOMAIN_SLACK && t[1] >= -DOMAIN_SLACK && t[0] + t[1] <= 1.0 + DOMAIN_SLACK
            }
        }
    }

    pub fn check(self, t: &[f64]) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(PmgaError::OutOfDomain {
                point: t.to_vec(),
                domain: self.name(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureMode {
    /// Interval midpoints, or centroids of a uniform triangulation of the simplex.
    #[default]
    Grid,
    MonteCarlo,
}

/// Latent nodes with weights summing to the domain measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Discretize `∫_T dt`.
///
/// For the simplex in grid mode the node count is rounded to the nearest
/// square `m²` (one centroid per sub-triangle of an `m`-fold subdivision).
pub fn sample_latent(domain: LatentDomain, n: usize, mode: QuadratureMode, seed: u64) -> Result<Quadrature> {
    if n == 0 {
        return Err(PmgaError::InvalidArgument("quadrature needs at least one node".into()));
    }
    let (points, measure) = match (domain, mode) {
        (LatentDomain::Interval, QuadratureMode::Grid) => (
            (0..n).map(|i| vec![(i as f64 + 0.5) / n as f64]).collect::<Vec<_>>(),
            1.0,
        ),
        (LatentDomain::Simplex, QuadratureMode::Grid) => {
            let m = ((n as f64).sqrt().round() as usize).max(1);
            let mf = m as f64;
            let mut pts = Vec::with_capacity(m * m);
            for i in 0..m {
                for j in 0..m - i {
                    pts.push(vec![(i as f64 + 1.0 / 3.0) / mf, (j as f64 + 1.0 / 3.0) / mf]);
                    if i + j + 1 < m {
                        pts.push(vec![(i as f64 + 2.0 / 3.0) / mf, (j as f64 + 2.0 / 3.0) / mf]);
                    }
                }
            }
            (pts, 0.5)
        }
        (LatentDomain::Interval, QuadratureMode::MonteCarlo) => {
            let mut rng = stream_rng(seed, 0);
            ((0..n).map(|_| vec![rng.random::<f64>()]).collect(), 1.0)
        }
        (LatentDomain::Simplex, QuadratureMode::MonteCarlo) => {
            let mut rng = stream_rng(seed, 0);
            let pts = (0..n)
                .map(|_| {
                    let (u, v): (f64, f64) = (rng.random(), rng.random());
                    if u + v > 1.0 {
                        vec![1.0 - u, 1.0 - v]
                    } else {
                        vec![u, v]
                    }
                })
                .collect();
            (pts, 0.5)
        }
    };
    let w = measure / points.len() as f64;
    let weights = vec![w; points.len()];
    Ok(Quadrature { points, weights })
}

/// A smooth map from latent points to policy parameters.
///
/// The raw methods may assume validated input; callers go through [`phi`],
/// [`d_phi_dt`], [`d_phi_drho`] and [`d2_phi_drho_dt`].
pub trait ParametricMap: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;
    fn rho_dim(&self) -> usize;
    fn theta_dim(&self) -> usize;
    fn domain(&self) -> LatentDomain;

    fn value(&self, rho: &[f64], t: &[f64]) -> Vector;
    /// `D_t φ`, `d × b`.
    fn jacobian_t(&self, rho: &[f64], t: &[f64]) -> Mat;
    /// `∂φ/∂ρ_i`, length `d`.
    fn grad_rho(&self, rho: &[f64], t: &[f64], i: usize) -> Vector;
    /// `∂(D_t φ)/∂ρ_i`, `d × b`.
    fn mixed_rho_t(&self, rho: &[f64], t: &[f64], i: usize) -> Mat;
}

fn validate(map: &dyn ParametricMap, rho: &[f64], t: &[f64]) -> Result<()> {
    if rho.len() != map.rho_dim() {
        return Err(PmgaError::Dimension(format!(
            "map `{}` takes {} parameters, got {}",
            map.id(),
            map.rho_dim(),
            rho.len()
        )));
    }
    if rho.iter().any(|r| !r.is_finite()) {
        return Err(PmgaError::InvalidArgument("map parameters must be finite".into()));
    }
    map.domain().check(t)
}

fn validate_index(map: &dyn ParametricMap, i: usize) -> Result<()> {
    if i >= map.rho_dim() {
        return Err(PmgaError::IndexOutOfRange {
            index: i,
            dim: map.rho_dim(),
        });
    }
    Ok(())
}

pub fn phi(map: &dyn ParametricMap, rho: &[f64], t: &[f64]) -> Result<Vector> {
    validate(map, rho, t)?;
    Ok(map.value(rho, t))
}

pub fn d_phi_dt(map: &dyn ParametricMap, rho: &[f64], t: &[f64]) -> Result<Mat> {
    validate(map, rho, t)?;
    Ok(map.jacobian_t(rho, t))
}

pub fn d_phi_drho(map: &dyn ParametricMap, rho: &[f64], t: &[f64], i: usize) -> Result<Vector> {
    validate(map, rho, t)?;
    validate_index(map, i)?;
    Ok(map.grad_rho(rho, t, i))
}

pub fn d2_phi_drho_dt(map: &dyn ParametricMap, rho: &[f64], t: &[f64], i: usize) -> Result<Mat> {
    validate(map, rho, t)?;
    validate_index(map, i)?;
    Ok(map.mixed_rho_t(rho, t, i))
}

/// Quadratic polynomial in at most two latent variables, coefficients on
/// `[1, t1, t2, t1², t2², t1·t2]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Poly2(pub [f64; 6]);

impl Poly2 {
    pub const ZERO: Poly2 = Poly2([0.0; 6]);

    pub fn constant(c: f64) -> Self {
        Poly2([c, 0.0, 0.0, 0.0, 0.0, 0.0])
    }

    /// `c + l·t − s·t²` in a single latent variable.
    pub fn univariate(c: f64, l: f64, s: f64) -> Self {
        Poly2([c, l, 0.0, -s, 0.0, 0.0])
    }

    fn split(t: &[f64]) -> (f64, f64) {
        (t[0], t.get(1).copied().unwrap_or(0.0))
    }

    pub fn eval(&self, t: &[f64]) -> f64 {
        let (x, y) = Self::split(t);
        let c = &self.0;
        c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * y * y + c[5] * x * y
    }

    pub fn grad(&self, t: &[f64]) -> [f64; 2] {
        let (x, y) = Self::split(t);
        let c = &self.0;
        [c[1] + 2.0 * c[3] * x + c[5] * y, c[2] + 2.0 * c[4] * y + c[5] * x]
    }
}

/// Scalar link applied to each inner polynomial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Link {
    Identity,
    Negate,
    Reciprocal,
    /// `scale · (1 + e^u)⁻¹`.
    Logistic { scale: f64 },
}

impl Link {
    /// `(F(u), F'(u), F''(u))`.
    fn eval(self, u: f64) -> (f64, f64, f64) {
        match self {
            Link::Identity => (u, 1.0, 0.0),
            Link::Negate => (-u, -1.0, 0.0),
            Link::Reciprocal => (1.0 / u, -1.0 / (u * u), 2.0 / (u * u * u)),
            Link::Logistic { scale } => {
                let s = if u >= 0.0 {
                    let e = (-u).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + u.exp())
                };
                let d1 = -s * (1.0 - s);
                let d2 = s * (1.0 - s) * (1.0 - 2.0 * s);
                (scale * s, scale * d1, scale * d2)
            }
        }
    }
}

/// `θ_k = F(u_k(t))` with `u_k(t) = base_k(t) + Σ_j ρ_j · P_kj(t)`.
///
/// Every inner function is linear in `ρ` and at most quadratic in `t`, which
/// covers all built-in maps.
#[derive(Debug, Clone)]
pub struct PolynomialMap {
    id: String,
    domain: LatentDomain,
    link: Link,
    rho_dim: usize,
    base: Vec<Poly2>,
    /// Per output component, the `(ρ index, polynomial)` pairs.
    terms: Vec<Vec<(usize, Poly2)>>,
}

impl PolynomialMap {
    pub fn new(
        id: impl Into<String>,
        domain: LatentDomain,
        link: Link,
        rho_dim: usize,
        base: Vec<Poly2>,
        terms: Vec<Vec<(usize, Poly2)>>,
    ) -> Result<Self> {
        if base.len() != terms.len() || base.is_empty() {
            return Err(PmgaError::Dimension("one term list per output component".into()));
        }
        if terms.iter().flatten().any(|(j, _)| *j >= rho_dim) {
            return Err(PmgaError::Dimension("term references a missing rho component".into()));
        }
        Ok(Self {
            id: id.into(),
            domain,
            link,
            rho_dim,
            base,
            terms,
        })
    }

    fn inner(&self, k: usize, rho: &[f64], t: &[f64]) -> (f64, [f64; 2]) {
        let mut u = self.base[k].eval(t);
        let mut du = self.base[k].grad(t);
        for (j, p) in &self.terms[k] {
            u += rho[*j] * p.eval(t);
            let g = p.grad(t);
            du[0] += rho[*j] * g[0];
            du[1] += rho[*j] * g[1];
        }
        (u, du)
    }

    fn coefficient(&self, k: usize, i: usize) -> Option<&Poly2> {
        self.terms[k].iter().find(|(j, _)| *j == i).map(|(_, p)| p)
    }
}

impl ParametricMap for PolynomialMap {
    fn id(&self) -> &str {
        &self.id
    }

    fn rho_dim(&self) -> usize {
        self.rho_dim
    }

    fn theta_dim(&self) -> usize {
        self.base.len()
    }

    fn domain(&self) -> LatentDomain {
        self.domain
    }

    fn value(&self, rho: &[f64], t: &[f64]) -> Vector {
        Vector::from_iterator(
            self.theta_dim(),
            (0..self.theta_dim()).map(|k| self.link.eval(self.inner(k, rho, t).0).0),
        )
    }

    fn jacobian_t(&self, rho: &[f64], t: &[f64]) -> Mat {
        let b = self.domain.dim();
        let mut out = Mat::zeros(self.theta_dim(), b);
        for k in 0..self.theta_dim() {
            let (u, du) = self.inner(k, rho, t);
            let (_, f1, _) = self.link.eval(u);
            for l in 0..b {
                out[(k, l)] = f1 * du[l];
            }
        }
        out
    }

    fn grad_rho(&self, rho: &[f64], t: &[f64], i: usize) -> Vector {
        Vector::from_iterator(
            self.theta_dim(),
            (0..self.theta_dim()).map(|k| match self.coefficient(k, i) {
                Some(p) => self.link.eval(self.inner(k, rho, t).0).1 * p.eval(t),
                None => 0.0,
            }),
        )
    }

    fn mixed_rho_t(&self, rho: &[f64], t: &[f64], i: usize) -> Mat {
        let b = self.domain.dim();
        let mut out = Mat::zeros(self.theta_dim(), b);
        for k in 0..self.theta_dim() {
            let Some(p) = self.coefficient(k, i) else { continue };
            let (u, du) = self.inner(k, rho, t);
            let (_, f1, f2) = self.link.eval(u);
            let pv = p.eval(t);
            let pg = p.grad(t);
            for l in 0..b {
                out[(k, l)] = f2 * pv * du[l] + f1 * pg[l];
            }
        }
        out
    }
}

/// Constants of the pinned 2-objective LQG map: the single-objective optimal
/// diagonal gains are `-0.2403` and `-0.8991`, and `0.6588` is their gap.
pub const LQG2_LOW_GAIN: f64 = 0.2403;
pub const LQG2_HIGH_GAIN: f64 = 0.8991;
pub const LQG2_GAIN_GAP: f64 = 0.6588;

pub const LQG3_A: f64 = 1.151035476;
pub const LQG3_B: f64 = 3.338299811;
pub const LQG3_C: f64 = 2.187264336;

/// `(c_k, d_k)` of the reservoir map `θ_k = c_k + (d_k + ρ_k) t − ρ_k t²`.
pub const RESERVOIR_COEFFS: [(f64, f64); 5] = [
    (61.4317, -11.4317),
    (-64.1980, 14.1980),
    (10.6159, -3.6159),
    (-22.8306, 44.8306),
    (37.8708, 67.1292),
];

/// 2-objective LQG, `θ_i = s · (1 + exp(ρ_{2i-1} + ρ_{2i} t))⁻¹`.
///
/// With `negative = true` (the default map) gains live in `[-1, 0]`; the
/// other sign gives the literal `[0, 1]` form.
pub fn lqg2_free(negative: bool) -> PolynomialMap {
    let scale = if negative { -1.0 } else { 1.0 };
    let one = Poly2::constant(1.0);
    let t = Poly2::univariate(0.0, 1.0, 0.0);
    PolynomialMap::new(
        if negative { "lqg2_free" } else { "lqg2_free_literal" },
        LatentDomain::Interval,
        Link::Logistic { scale },
        4,
        vec![Poly2::ZERO, Poly2::ZERO],
        vec![vec![(0, one), (1, t)], vec![(2, one), (3, t)]],
    )
    .expect("static map definition")
}

/// 2-objective LQG map pinned to the single-objective optima at `t = 0` and
/// `t = 1`: `θ_1 = −(0.2403 + (0.6588 + ρ1) t − ρ1 t²)`,
/// `θ_2 = −(0.8991 + (−0.6588 + ρ2) t − ρ2 t²)`.
pub fn lqg2_pinned() -> PolynomialMap {
    let path = Poly2::univariate(0.0, 1.0, 1.0); // t − t²
    PolynomialMap::new(
        "lqg2_pinned",
        LatentDomain::Interval,
        Link::Negate,
        2,
        vec![
            Poly2::univariate(LQG2_LOW_GAIN, LQG2_GAIN_GAP, 0.0),
            Poly2::univariate(LQG2_HIGH_GAIN, -LQG2_GAIN_GAP, 0.0),
        ],
        vec![vec![(0, path)], vec![(1, path)]],
    )
    .expect("static map definition")
}

/// Reciprocal-quadratic form taken literally:
/// `θ_1 = (0.2403 − ρ2 t² + (0.6588 + ρ1) t)⁻¹`,
/// `θ_2 = (0.8991 − ρ2 t² + (−0.6588 + ρ2) t)⁻¹`.
///
/// Its gains are positive, so it does not stabilize the LQG; kept for
/// completeness.
pub fn lqg2_pinned_reciprocal() -> PolynomialMap {
    let lin = Poly2::univariate(0.0, 1.0, 0.0);
    let sq = Poly2::univariate(0.0, 0.0, 1.0);
    let path = Poly2::univariate(0.0, 1.0, 1.0);
    PolynomialMap::new(
        "lqg2_pinned_reciprocal",
        LatentDomain::Interval,
        Link::Reciprocal,
        2,
        vec![
            Poly2::univariate(LQG2_LOW_GAIN, LQG2_GAIN_GAP, 0.0),
            Poly2::univariate(LQG2_HIGH_GAIN, -LQG2_GAIN_GAP, 0.0),
        ],
        vec![vec![(0, lin), (1, sq)], vec![(1, path)]],
    )
    .expect("static map definition")
}

/// 3-objective LQG map on the simplex, pinned to the three single-objective
/// optima at its vertices.
pub fn lqg3_pinned() -> PolynomialMap {
    let (a, b, c) = (LQG3_A, LQG3_B, LQG3_C);
    let t1_bump = Poly2([0.0, 1.0, 0.0, -1.0, 0.0, 0.0]); // t1 − t1²
    let t2_bump = Poly2([0.0, 0.0, 1.0, 0.0, -1.0, 0.0]); // t2 − t2²
    let cross = Poly2([0.0, 0.0, 0.0, 0.0, 0.0, -1.0]); // −t1·t2
    PolynomialMap::new(
        "lqg3_pinned",
        LatentDomain::Simplex,
        Link::Logistic { scale: -1.0 },
        9,
        vec![
            Poly2([a, 0.0, -b, 0.0, 0.0, 0.0]),
            Poly2([a, -b, 0.0, 0.0, 0.0, 0.0]),
            Poly2([-c, b, b, 0.0, 0.0, 0.0]),
        ],
        vec![
            vec![(0, t1_bump), (1, t2_bump), (2, cross)],
            vec![(3, t1_bump), (4, t2_bump), (5, cross)],
            vec![(6, t1_bump), (7, t2_bump), (8, cross)],
        ],
    )
    .expect("static map definition")
}

/// Water-reservoir map, five quadratics through fixed endpoints.
pub fn reservoir_quadratic() -> PolynomialMap {
    let path = Poly2::univariate(0.0, 1.0, 1.0);
    PolynomialMap::new(
        "reservoir_quadratic",
        LatentDomain::Interval,
        Link::Identity,
        5,
        RESERVOIR_COEFFS.iter().map(|&(c, d)| Poly2::univariate(c, d, 0.0)).collect(),
        (0..5).map(|k| vec![(k, path)]).collect(),
    )
    .expect("static map definition")
}

/// Straight segment between the two 2-objective LQG optima; ignores its
/// single parameter.
pub fn lqg2_segment() -> PolynomialMap {
    PolynomialMap::new(
        "lqg2_segment",
        LatentDomain::Interval,
        Link::Negate,
        1,
        vec![
            Poly2::univariate(LQG2_LOW_GAIN, LQG2_GAIN_GAP, 0.0),
            Poly2::univariate(LQG2_HIGH_GAIN, -LQG2_GAIN_GAP, 0.0),
        ],
        vec![vec![], vec![]],
    )
    .expect("static map definition")
}

/// Maps addressable by identifier.
#[derive(Debug, Clone)]
pub struct MapRegistry {
    maps: BTreeMap<String, Arc<dyn ParametricMap>>,
}

impl Default for MapRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl MapRegistry {
    pub fn empty() -> Self {
        Self { maps: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(lqg2_free(true)));
        reg.register(Arc::new(lqg2_free(false)));
        reg.register(Arc::new(lqg2_pinned()));
        reg.register(Arc::new(lqg2_pinned_reciprocal()));
        reg.register(Arc::new(lqg2_segment()));
        reg.register(Arc::new(lqg3_pinned()));
        reg.register(Arc::new(reservoir_quadratic()));
        reg
    }

    pub fn register(&mut self, map: Arc<dyn ParametricMap>) {
        self.maps.insert(map.id().to_string(), map);
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn ParametricMap>> {
        self.maps
            .get(id)
            .cloned()
            .ok_or_else(|| PmgaError::UnknownMap(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.maps.keys().map(String::as_str)
    }
}
