//! Finite-difference derivatives of black-box scalar functions.
//!
//! These only ever call the function being differentiated, which keeps them
//! usable as independent checks on hand-derived gradients.

use crate::matcalc::{Mat, Vector};

/// Central-difference gradient with a fixed step.
pub fn central_gradient<F>(f: F, x: &Vector, h: f64) -> Vector
where
    F: Fn(&Vector) -> f64,
{
    let mut g = Vector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Hessian (symmetric by construction).
pub fn central_hessian<F>(f: F, x: &Vector, h: f64) -> Mat
where
    F: Fn(&Vector) -> f64,
{
    let n = x.len();
    let mut hess = Mat::zeros(n, n);
    let f0 = f(x);
    let mut xp = x.clone();
    for i in 0..n {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let mut eval = |di: f64, dj: f64| {
                xp[i] = x[i] + di;
                xp[j] = x[j] + dj;
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Richardson extrapolation of a central-difference estimator that has an
/// even error expansion `c₂h² + c₄h⁴ + …`, using steps `h, h/2, h/4, …`.
pub fn richardson<T, E>(estimate: E, h: f64, levels: usize) -> T
where
    E: Fn(f64) -> T,
    T: Clone + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let levels = levels.max(1);
    let mut table: Vec<T> = (0..levels).map(|k| estimate(h / 2f64.powi(k as i32))).collect();
    for order in 1..levels {
        let factor = 4f64.powi(order as i32);
        for k in (order..levels).rev() {
            let refined = table[k].clone() + (table[k].clone() - table[k - 1].clone()) * (1.0 / (factor - 1.0));
            table[k] = refined;
        }
    }
    table[levels - 1].clone()
}

pub fn richardson_gradient<F>(f: F, x: &Vector, h: f64, levels: usize) -> Vector
where
    F: Fn(&Vector) -> f64,
{
    richardson(|step| central_gradient(&f, x, step), h, levels)
}

pub fn richardson_hessian<F>(f: F, x: &Vector, h: f64, levels: usize) -> Mat
where
    F: Fn(&Vector) -> f64,
{
    richardson(|step| central_hessian(&f, x, step), h, levels)
}

/// Largest elementwise relative error `|a − b| / max(|b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}
