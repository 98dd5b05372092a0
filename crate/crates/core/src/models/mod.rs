//! Target models: prior, likelihood, their gradients and prior sampling.
//!
//! Every model is expressed on its sampling scale, which is the scale the
//! sampler and the control variates work on. A model whose natural
//! parameters are constrained reports the map back through
//! [`TargetModel::transform`].

mod gaussian;
mod logistic;
mod manifest;
mod recapture;

pub use gaussian::{ConjugateGaussian, GaussianModel};
pub use logistic::{standardise_predictors, synthetic_logistic, LogisticModel};
pub use manifest::{build_model, load_model, ModelManifest};
pub use recapture::{RecaptureData, RecaptureModel};

use nalgebra::DMatrix;

use crate::samples::ParameterTransform;

/// A Bayesian target `p_t(θ) ∝ ℓ(θ)^t p_0(θ)`.
pub trait TargetModel: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn log_prior(&self, theta: &[f64]) -> f64;
    fn grad_log_prior(&self, theta: &[f64]) -> Vec<f64>;
    fn log_like(&self, theta: &[f64]) -> f64;
    fn grad_log_like(&self, theta: &[f64]) -> Vec<f64>;
    /// `n × d` independent prior draws.
    fn sample_prior(&self, n: usize, seed: u64) -> DMatrix<f64>;

    /// Map from the sampling scale to the natural parameters.
    fn transform(&self) -> ParameterTransform {
        ParameterTransform::identity(self.dim())
    }

    /// How the target satisfies the tail condition needed for the Stein
    /// identity.
    fn boundary_note(&self) -> &'static str;

    /// Closed-form log evidence, when known.
    fn log_evidence(&self) -> Option<f64> {
        None
    }

    /// `t·∇log ℓ + ∇log p_0`.
    fn grad_log_tempered(&self, theta: &[f64], t: f64) -> Vec<f64> {
        let mut g = self.grad_log_prior(theta);
        if t != 0.0 {
            for (a, b) in g.iter_mut().zip(self.grad_log_like(theta)) {
                *a += t * b;
            }
        }
        g
    }
}

/// Largest discrepancy between the analytic gradients of `model` and
/// central differences with step `h`, relative to `max(1, |analytic|)`.
/// Checks the prior and likelihood separately.
pub fn gradient_check(model: &dyn TargetModel, theta: &[f64], h: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let parts: [(&dyn Fn(&[f64]) -> f64, Vec<f64>); 2] = [
        (&|x| model.log_prior(x), model.grad_log_prior(theta)),
        (&|x| model.log_like(x), model.grad_log_like(theta)),
    ];
    for (f, g) in parts.iter() {
        for k in 0..theta.len() {
            let mut p = theta.to_vec();
            let mut m = theta.to_vec();
            p[k] += h;
            m[k] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1.0));
        }
    }
    worst
}

pub(crate) fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}
