//! Fitting discrete latent-variable mixtures by EM, with a Laplace (Gaussian)
//! approximation of the parameter posterior at the fitted mode.
//!
//! The gradient of the log joint `log P(X, Θ)` is assembled from the
//! posterior-weighted complete-data gradients, and the Hessian is mapped out
//! column by column from Hessian-vector products: forward-mode directional
//! derivatives of that gradient, evaluated with dual numbers, the complex
//! step, or central differences.
//!
//! Module map:
//!
//! - [`diffnum`]: generic scalar realizations and the directional derivative.
//! - [`models`]: Gaussian and coin (binomial) mixtures with hand-coded gradients.
//! - [`em`]: E-step, M-step, the EM driver, auxiliary and divergence.
//! - [`laplace`]: gradient, HVP, Hessian and the Laplace posterior.
//! - [`oracle`]: independent brute-force references used for verification.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffnum;
pub mod em;
mod error;
pub mod laplace;
pub mod models;
pub mod oracle;

pub use diffnum::{directional_derivative, DiffFunction, DiffStrategy, Dual, Scalar};
pub use em::{
    auxiliary, divergence, e_step, em_fit, em_step, log_joint, m_step, Dataset, EmConfig, EmTrace,
    HiddenPosterior, Iterate, ParamVector, StopReason,
};
pub use error::{Error, Result};
pub use laplace::{
    grad_log_joint, hessian, hvp, laplace_posterior, HessianMatrix, LaplacePosterior,
};
pub use models::{CoinMixture, CoinRecord, GaussianMixture, GaussianPrior, MixtureModel};
