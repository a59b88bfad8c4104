//! Tabular machinery for distributionally robust offline imitation learning.
//!
//! The crate provides exact occupancy-measure computations for small MDPs,
//! an f-divergence generator catalog, the closed-form adversarial importance
//! weighting scheme with its alternating dual/policy optimizer, brute-force
//! oracles that certify the underlying convex-duality and total-variation
//! bounds, and a gridworld perturbation harness for evaluating learned
//! policies under shifted transition dynamics.

pub mod baselines;
pub mod dataset;
pub mod divergence;
pub mod mdp;
pub mod oracle;
pub mod perturb;
pub mod robust;
pub mod solver;

mod error;

pub use error::{Error, Result};
