//! Pareto-manifold gradient ascent (PMGA) for multi-objective policy search.
//!
//! A parametric map `φ_ρ` sends a latent domain into policy-parameter space;
//! composing it with the return map `J(θ)` traces a candidate Pareto frontier.
//! The crate evaluates the volume integral of a frontier-quality indicator over
//! that candidate and its exact gradient with respect to `ρ`, then ascends it.

pub mod error;
pub mod estimators;
pub mod lqg;
pub mod manifold;
pub mod matcalc;
pub mod metrics;
pub mod numdiff;
pub mod pmga;
pub mod reservoir;
pub mod rng;
pub mod tabular;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{PmgaError, Result};
pub use matcalc::{Mat, Vector};
