//! Variational Bayes toolkit.
//!
//! The crate provides three groups of posterior approximation tools:
//!
//! - coordinate-ascent mean-field variational Bayes for two conjugate
//!   models (a normal measurement model and a Bayesian lasso regression),
//! - a stochastic fixed-form engine driven by score-function gradients
//!   with control variates or by reparameterized gradients, with adaptive
//!   or natural-gradient steps,
//! - Gaussian variational approximations with a Cholesky-factored or
//!   factor-decomposed covariance, including an O(d) natural-gradient
//!   update for the factor form.
//!
//! Independent checking tools (a Gibbs sampler, a random-walk Metropolis
//! sampler, finite-difference gradients, and a Monte-Carlo Fisher matrix)
//! live in [`validate`].

pub mod dist;
pub mod error;
pub mod ffvb;
pub mod gvb;
pub mod mfvb;
pub mod models;
pub mod special;
pub mod validate;

pub use error::{Result, VbError};

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

impl McEstimate {
    /// Sample mean and standard error of the mean. A single value gets a
    /// zero standard error.
    pub fn from_values(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "need at least one value");
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() == 1 {
            return Self { mean, std_err: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        Self { mean, std_err: (var / n).sqrt() }
    }
}
