//! Derivative-based control variates for Monte Carlo integration.
//!
//! The crate post-processes weighted samples `θ_i` and log-target gradients
//! `∇log p(θ_i)` to reduce the variance of expectation and evidence
//! estimators:
//!
//! * [`zvcv`]: zero-variance control variates built from the Stein operator
//!   applied to polynomials, fitted by OLS, ridge or LASSO, with *a priori*
//!   coordinate subsets and automatic cross-validated selection.
//! * [`cf`]: control functionals with Gaussian and polynomial kernels.
//! * [`smc`]: an adaptive likelihood-annealing SMC sampler with MALA moves
//!   that produces the samples.
//! * [`evidence`]: thermodynamic-integration and telescoping-product
//!   evidence estimators with control variates on every expectation.

pub mod cf;
pub mod error;
pub mod evidence;
pub mod models;
pub mod polybasis;
pub mod regression;
pub mod rng;
pub mod samples;
pub mod smc;
pub mod zvcv;

pub use error::{Error, Result};
