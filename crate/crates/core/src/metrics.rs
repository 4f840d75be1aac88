//! Frontier-quality indicators and frontier statistics.
//!
//! Indicators map a return vector `J` (and, for the stationarity residual,
//! the return Jacobian `G = D_θ J`) to a scalar, together with `∂I/∂J` and
//! `∂I/∂G`. The statistics (area, dominance, hypervolume) evaluate sampled
//! frontiers.

use serde::{Deserialize, Serialize};

use crate::error::{PmgaError, Result};
use crate::matcalc::{Mat, Vector};

/// Guards `ĝ = g / sqrt(‖g‖² + GRADIENT_FLOOR)` against zero rows.
pub const GRADIENT_FLOOR: f64 = 1e-12;

/// Default `κ` of [`StationarityScale::Unit`].
pub const DEFAULT_SOFTENING: f64 = 0.05;

/// Relative margin used for default utopia and antiutopia points.
pub const REFERENCE_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Utopia,
    Antiutopia,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferencePoint {
    pub kind: ReferenceKind,
    pub point: Vec<f64>,
}

impl ReferencePoint {
    pub fn utopia(point: Vec<f64>) -> Self {
        Self {
            kind: ReferenceKind::Utopia,
            point,
        }
    }

    pub fn antiutopia(point: Vec<f64>) -> Self {
        Self {
            kind: ReferenceKind::Antiutopia,
            point,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.point.is_empty() || self.point.iter().any(|x| !x.is_finite()) {
            return Err(PmgaError::InvalidArgument("reference point must be finite and nonempty".into()));
        }
        Ok(())
    }

    /// Whether every frontier point sits on the expected side of the
    /// reference: dominated by a utopia, dominating an antiutopia.
    pub fn is_consistent_with(&self, points: &[Vector]) -> bool {
        points.iter().all(|j| {
            j.iter().zip(&self.point).all(|(v, p)| match self.kind {
                ReferenceKind::Utopia => v <= p,
                ReferenceKind::Antiutopia => v >= p,
            })
        })
    }

    /// Logs a warning when `points` fall on the wrong side.
    pub fn warn_if_inconsistent(&self, points: &[Vector]) -> bool {
        let ok = self.is_consistent_with(points);
        if !ok {
            log::warn!("{:?} reference {:?} is not on the expected side of the frontier", self.kind, self.point);
        }
        ok
    }
}

/// Utopia and antiutopia from the return vectors of the single-objective
/// optima: `optima[i]` is `J` at the maximizer of objective `i`. Each
/// coordinate is pushed outward by `margin · |value|`.
pub fn reference_points(optima: &[Vector], margin: f64) -> Result<(ReferencePoint, ReferencePoint)> {
    let q = optima.len();
    if q == 0 || optima.iter().any(|j| j.len() != q) {
        return Err(PmgaError::Dimension("need one q-dimensional return per objective".into()));
    }
    let mut utopia = vec![0.0; q];
    let mut anti = vec![0.0; q];
    for k in 0..q {
        let best = optima[k][k];
        let worst = optima.iter().map(|j| j[k]).fold(f64::INFINITY, f64::min);
        utopia[k] = best + margin * best.abs();
        anti[k] = worst - margin * worst.abs();
    }
    Ok((ReferencePoint::utopia(utopia), ReferencePoint::antiutopia(anti)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    /// Squared distance from the reference point.
    #[default]
    Distance,
    /// Pareto-stationarity residual.
    Stationarity,
    /// Antiutopia distance weighted by `1 − λ · residual`.
    Mixed,
}

/// How rows of `G` are scaled before the residual is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StationarityScale {
    /// Rows scaled to `g_i / sqrt(‖g_i‖² + κ²‖G‖²)`, so the residual lies in
    /// `[0, 1)` and varies smoothly where one row vanishes.
    Unit { softening: f64 },
    /// Rows used as they are.
    Raw,
}

impl Default for StationarityScale {
    fn default() -> Self {
        StationarityScale::Unit {
            softening: DEFAULT_SOFTENING,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Normalization {
    #[default]
    None,
    /// Objective `∫ I dV · A^(−β)`.
    AreaPower { beta: f64 },
    /// Integrand `w1 · I + w2 · A`.
    ConvexCombo { w1: f64, w2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicatorSpec {
    pub kind: IndicatorKind,
    pub reference: Option<ReferencePoint>,
    pub lambda: f64,
    /// Use `‖J − p‖²` instead of `‖J − p‖² / ‖p‖²`.
    pub raw_distance: bool,
    pub stationarity: StationarityScale,
    pub normalization: Normalization,
    /// Defaults to minimizing a utopia distance and maximizing otherwise.
    pub direction: Option<Direction>,
}

impl Default for IndicatorSpec {
    fn default() -> Self {
        Self {
            kind: IndicatorKind::Distance,
            reference: None,
            lambda: 0.0,
            raw_distance: false,
            stationarity: StationarityScale::default(),
            normalization: Normalization::None,
            direction: None,
        }
    }
}

/// Indicator value with its partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorValue {
    pub value: f64,
    pub grad_j: Vector,
    /// `∂I/∂G`, present when the indicator depends on the Jacobian.
    pub grad_g: Option<Mat>,
}

impl IndicatorSpec {
    pub fn distance(reference: ReferencePoint) -> Self {
        Self {
            reference: Some(reference),
            ..Self::default()
        }
    }

    pub fn stationarity() -> Self {
        Self {
            kind: IndicatorKind::Stationarity,
            ..Self::default()
        }
    }

    pub fn mixed(antiutopia: Vec<f64>, lambda: f64) -> Self {
        Self {
            kind: IndicatorKind::Mixed,
            reference: Some(ReferencePoint::antiutopia(antiutopia)),
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(PmgaError::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let StationarityScale::Unit { softening } = self.stationarity {
            if !(softening >= 0.0) || !softening.is_finite() {
                return Err(PmgaError::InvalidArgument(format!("softening must be >= 0, got {softening}")));
            }
        }
        match self.normalization {
            Normalization::ConvexCombo { w1, w2 } if (w1 + w2 - 1.0).abs() > 1e-9 || w1 < 0.0 || w2 < 0.0 => {
                return Err(PmgaError::InvalidArgument(format!(
                    "convex-combination weights must be nonnegative and sum to 1, got {w1} + {w2}"
                )));
            }
            Normalization::AreaPower { beta } if !beta.is_finite() => {
                return Err(PmgaError::InvalidArgument("beta must be finite".into()));
            }
            _ => {}
        }
        match (self.kind, &self.reference) {
            (IndicatorKind::Stationarity, _) => Ok(()),
            (_, None) => Err(PmgaError::Config("indicator needs a reference point".into())),
            (_, Some(r)) => {
                r.validate()?;
                if !self.raw_distance && r.point.iter().all(|x| *x == 0.0) {
                    return Err(PmgaError::ZeroReference);
                }
                Ok(())
            }
        }
    }

    pub fn needs_jacobian(&self) -> bool {
        match self.kind {
            IndicatorKind::Distance => false,
            IndicatorKind::Stationarity => true,
            IndicatorKind::Mixed => self.lambda != 0.0,
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction.unwrap_or(match (self.kind, &self.reference) {
            (IndicatorKind::Distance, Some(r)) if r.kind == ReferenceKind::Utopia => Direction::Minimize,
            (IndicatorKind::Stationarity, _) => Direction::Minimize,
            _ => Direction::Maximize,
        })
    }

    fn reference_point(&self, q: usize) -> Result<&[f64]> {
        let r = self
            .reference
            .as_ref()
            .ok_or_else(|| PmgaError::Config("indicator needs a reference point".into()))?;
        if r.point.len() != q {
            return Err(PmgaError::Dimension(format!(
                "reference point has {} entries for {q} objectives",
                r.point.len()
            )));
        }
        Ok(&r.point)
    }

    fn distance_term(&self, j: &Vector) -> Result<(f64, Vector)> {
        let p = Vector::from_column_slice(self.reference_point(j.len())?);
        let scale = if self.raw_distance {
            1.0
        } else {
            let n2 = p.norm_squared();
            if n2 == 0.0 {
                return Err(PmgaError::ZeroReference);
            }
            1.0 / n2
        };
        let diff = j - p;
        Ok((diff.norm_squared() * scale, diff * (2.0 * scale)))
    }

    /// Value and derivatives at `J`; `jacobian` is required when the
    /// indicator involves the stationarity residual.
    pub fn evaluate(&self, j: &Vector, jacobian: Option<&Mat>) -> Result<IndicatorValue> {
        match self.kind {
            IndicatorKind::Distance => {
                let (value, grad_j) = self.distance_term(j)?;
                Ok(IndicatorValue {
                    value,
                    grad_j,
                    grad_g: None,
                })
            }
            IndicatorKind::Stationarity => {
                let g = jacobian.ok_or(PmgaError::MissingDerivatives("stationarity"))?;
                check_jacobian(j, g)?;
                let r = stationarity_residual(g, self.stationarity);
                Ok(IndicatorValue {
                    value: r.value,
                    grad_j: Vector::zeros(j.len()),
                    grad_g: Some(r.grad),
                })
            }
            IndicatorKind::Mixed => {
                let (i1, d1) = self.distance_term(j)?;
                if self.lambda == 0.0 {
                    return Ok(IndicatorValue {
                        value: i1,
                        grad_j: d1,
                        grad_g: jacobian.map(|g| Mat::zeros(g.nrows(), g.ncols())),
                    });
                }
                let g = jacobian.ok_or(PmgaError::MissingDerivatives("mixed"))?;
                check_jacobian(j, g)?;
                let r = stationarity_residual(g, self.stationarity);
                let w = 1.0 - self.lambda * r.value;
                Ok(IndicatorValue {
                    value: i1 * w,
                    grad_j: d1 * w,
                    grad_g: Some(r.grad * (-self.lambda * i1)),
                })
            }
        }
    }
}

fn check_jacobian(j: &Vector, g: &Mat) -> Result<()> {
    if g.nrows() != j.len() {
        return Err(PmgaError::Dimension(format!(
            "Jacobian has {} rows for {} objectives",
            g.nrows(),
            j.len()
        )));
    }
    Ok(())
}

/// Minimizer of `αᵀ Q α` over the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexQp {
    pub alpha: Vector,
    pub value: f64,
}

/// Solves `min_{α ∈ Δ} αᵀ Q α` for a small positive semidefinite `Q` by
/// enumerating active supports and solving each equality-constrained
/// subproblem.
pub fn simplex_qp(q: &Mat) -> SimplexQp {
    let n = q.nrows();
    assert!(n >= 1 && n <= 16 && q.is_square(), "simplex QP expects a small square matrix");
    let mut best: Option<SimplexQp> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let k = support.len();
        let mut kkt = Mat::zeros(k + 1, k + 1);
        let mut rhs = Vector::zeros(k + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = 2.0 * q[(i, j)];
            }
            kkt[(a, k)] = 1.0;
            kkt[(k, a)] = 1.0;
        }
        rhs[k] = 1.0;
        let Ok(sol) = kkt.clone().svd(true, true).solve(&rhs, 1e-13) else {
            continue;
        };
        if (&kkt * &sol - &rhs).amax() > 1e-8 {
            continue;
        }
        if support.iter().enumerate().any(|(a, _)| sol[a] < -1e-12) {
            continue;
        }
        let mut alpha = Vector::zeros(n);
        for (a, &i) in support.iter().enumerate() {
            alpha[i] = sol[a].max(0.0);
        }
        alpha /= alpha.sum();
        let value = (alpha.transpose() * q * &alpha)[(0, 0)].max(0.0);
        if best.as_ref().is_none_or(|b| value < b.value - 1e-15) {
            best = Some(SimplexQp { alpha, value });
        }
    }
    best.expect("every vertex is a feasible support")
}

/// Stationarity residual `min_{α ∈ Δ} ‖Σ α_i ĝ_i‖²` and its gradient with
/// respect to `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub value: f64,
    pub alpha: Vector,
    pub grad: Mat,
}

pub fn stationarity_residual(g: &Mat, scale: StationarityScale) -> Residual {
    let (q, d) = g.shape();
    let mut rows = g.clone();
    let mut norms = vec![1.0; q];
    let softening = match scale {
        StationarityScale::Raw => None,
        StationarityScale::Unit { softening } => Some(softening * softening),
    };
    if let Some(k2) = softening {
        let frob2 = g.norm_squared();
        for i in 0..q {
            norms[i] = (g.row(i).norm_squared() + k2 * frob2 + GRADIENT_FLOOR).sqrt();
            rows.row_mut(i).scale_mut(1.0 / norms[i]);
        }
    }
    let gram = &rows * rows.transpose();
    let SimplexQp { alpha, value } = simplex_qp(&gram);
    let v = rows.transpose() * &alpha;
    let value = value.min(v.norm_squared()).max(0.0);
    // Envelope theorem: ∂/∂ĝ_i = u_i = 2 α_i v.
    let u: Vec<Vector> = (0..q).map(|i| &v * (2.0 * alpha[i])).collect();
    let mut grad = Mat::zeros(q, d);
    match softening {
        None => {
            for i in 0..q {
                grad.set_row(i, &u[i].transpose());
            }
        }
        Some(k2) => {
            // With s_i = sqrt(‖g_i‖² + κ²‖G‖²), chain through every s_i:
            // ∂/∂g_j = u_j / s_j − g_j (c_j + κ² Σ_i c_i), c_i = g_iᵀu_i / s_i³.
            let c: Vec<f64> = (0..q)
                .map(|i| g.row(i).transpose().dot(&u[i]) / norms[i].powi(3))
                .collect();
            let total: f64 = c.iter().sum();
            for j in 0..q {
                let gj = g.row(j).transpose();
                let row = &u[j] / norms[j] - gj * (c[j] + k2 * total);
                grad.set_row(j, &row.transpose());
            }
        }
    }
    Residual { value, alpha, grad }
}

/// `Σ_k w_k vol_k`.
pub fn frontier_area(weights: &[f64], volumes: &[f64]) -> f64 {
    weights.iter().zip(volumes).map(|(w, v)| w * v).sum()
}

fn ranges(points: &[Vector]) -> Vec<f64> {
    let q = points.first().map_or(0, |p| p.len());
    (0..q)
        .map(|k| {
            let (lo, hi) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[k]), hi.max(p[k])));
            hi - lo
        })
        .collect()
}

/// Indices of the points kept after removing those dominated with slack
/// `ε · range_k`: `p` falls when some kept `o` has `p_k ≤ o_k + ε·range_k`
/// everywhere and strictly somewhere. Points are visited in decreasing
/// lexicographic order, so among mutually dominating points the
/// lexicographically largest survives.
pub fn pareto_filter(points: &[Vector], epsilon: f64) -> Vec<usize> {
    let slack: Vec<f64> = ranges(points).iter().map(|r| epsilon * r).collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[b]
            .iter()
            .zip(points[a].iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let p = &points[i];
        let dominated = kept.iter().any(|&j| {
            let o = &points[j];
            let mut strict = false;
            for k in 0..p.len() {
                let lim = o[k] + slack[k];
                if p[k] > lim {
                    return false;
                }
                strict |= p[k] < lim;
            }
            strict
        });
        if !dominated {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

/// Number of points beaten by a margin: `p` counts when another point `o`
/// has `o_k ≥ p_k + ε · range_k` for every objective and `o ≠ p`.
pub fn epsilon_dominated_count(points: &[Vector], epsilon: f64) -> usize {
    let margin: Vec<f64> = ranges(points).iter().map(|r| epsilon * r).collect();
    points
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            points.iter().enumerate().any(|(j, o)| {
                j != *i
                    && o.iter().zip(p.iter()).any(|(a, b)| a > b)
                    && (0..p.len()).all(|k| o[k] >= p[k] + margin[k])
            })
        })
        .count()
}

/// Exact hypervolume of the region dominated by `points` and dominating
/// `reference` (maximization), for up to three objectives.
pub fn hypervolume(points: &[Vector], reference: &[f64]) -> Result<f64> {
    let q = reference.len();
    if points.iter().any(|p| p.len() != q) {
        return Err(PmgaError::Dimension("points and reference differ in length".into()));
    }
    let shifted: Vec<Vec<f64>> = points
        .iter()
        .filter(|p| p.iter().zip(reference).all(|(v, r)| v > r))
        .map(|p| p.iter().zip(reference).map(|(v, r)| v - r).collect())
        .collect();
    match q {
        1 => Ok(shifted.iter().map(|p| p[0]).fold(0.0, f64::max)),
        2 => Ok(hv2(shifted.iter().map(|p| (p[0], p[1])).collect())),
        3 => {
            let mut levels: Vec<f64> = shifted.iter().map(|p| p[2]).collect();
            levels.sort_by(|a, b| b.total_cmp(a));
            levels.dedup();
            let mut total = 0.0;
            for (i, &z) in levels.iter().enumerate() {
                let below = levels.get(i + 1).copied().unwrap_or(0.0);
                let slab: Vec<(f64, f64)> = shifted.iter().filter(|p| p[2] >= z).map(|p| (p[0], p[1])).collect();
                total += hv2(slab) * (z - below);
            }
            Ok(total)
        }
        _ => Err(PmgaError::InvalidArgument(format!(
            "hypervolume supports at most 3 objectives, got {q}"
        ))),
    }
}

/// Area dominated by points in the positive quadrant, relative to the origin.
fn hv2(mut pts: Vec<(f64, f64)>) -> f64 {
    pts.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut area = 0.0;
    let mut y_max = 0.0f64;
    for (x, y) in pts {
        if y > y_max {
            area += x * (y - y_max);
            y_max = y;
        }
    }
    area
}
