use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{log_normal_pdf, TargetModel};
use crate::error::{Error, Result};
use crate::rng;

/// `N(μ, Σ)` used as the whole target: the likelihood is identically one.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    mu: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianModel {
    pub fn new(mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if d == 0 || sigma.shape() != (d, d) {
            return Err(Error::invalid("gaussian model needs a d-vector mean and d×d covariance"));
        }
        if (&sigma - sigma.transpose()).amax() > 1e-12 * sigma.amax().max(1.0) {
            return Err(Error::invalid("covariance must be symmetric"));
        }
        let chol = sigma
            .cholesky()
            .ok_or_else(|| Error::invalid("covariance must be positive definite"))?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(GaussianModel { mu: DVector::from_vec(mu), chol, precision, log_norm })
    }

    /// Independent coordinates with the given standard deviations.
    pub fn diagonal(mu: Vec<f64>, sd: &[f64]) -> Result<Self> {
        let sigma = DMatrix::from_diagonal(&DVector::from_iterator(sd.len(), sd.iter().map(|s| s * s)));
        Self::new(mu, sigma)
    }

    pub fn mean(&self) -> &[f64] {
        self.mu.as_slice()
    }
}

impl TargetModel for GaussianModel {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let r = DVector::from_column_slice(theta) - &self.mu;
        self.log_norm - 0.5 * r.dot(&(&self.precision * &r))
    }

    fn grad_log_prior(&self, theta: &[f64]) -> Vec<f64> {
        let r = DVector::from_column_slice(theta) - &self.mu;
        (-(&self.precision * r)).iter().copied().collect()
    }

    fn log_like(&self, _theta: &[f64]) -> f64 {
        0.0
    }

    fn grad_log_like(&self, _theta: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn sample_prior(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let d = self.dim();
        let mut r = rng::stream(seed, &[0x7072_696f_72]);
        let z = DMatrix::from_fn(d, n, |_, _| r.sample::<f64, _>(StandardNormal));
        let x = self.chol.l() * z;
        DMatrix::from_fn(n, d, |i, k| self.mu[k] + x[(k, i)])
    }

    fn boundary_note(&self) -> &'static str {
        "gaussian tails decay faster than any polynomial"
    }

    fn log_evidence(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Isotropic conjugate normal model: `θ ~ N(μ0, σ0² I)`, rows
/// `y_r ~ N(θ, σ² I)`.
#[derive(Debug, Clone)]
pub struct ConjugateGaussian {
    prior_mean: Vec<f64>,
    prior_sd: f64,
    noise_sd: f64,
    n: usize,
    ybar: Vec<f64>,
    /// Per-coordinate within-sample sum of squares.
    ss: Vec<f64>,
}

impl ConjugateGaussian {
    pub fn new(prior_mean: Vec<f64>, prior_sd: f64, noise_sd: f64, y: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = y.shape();
        if d != prior_mean.len() || d == 0 {
            return Err(Error::invalid("data columns must match the prior mean"));
        }
        if n == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if !(prior_sd > 0.0) || !(noise_sd > 0.0) {
            return Err(Error::invalid("standard deviations must be positive"));
        }
        let ybar: Vec<f64> = (0..d).map(|k| y.column(k).mean()).collect();
        let ss = (0..d)
            .map(|k| y.column(k).iter().map(|v| (v - ybar[k]).powi(2)).sum())
            .collect();
        Ok(ConjugateGaussian { prior_mean, prior_sd, noise_sd, n, ybar, ss })
    }

    /// Simulates `n` rows around `truth` with a fixed seed.
    pub fn synthetic(prior_mean: Vec<f64>, prior_sd: f64, noise_sd: f64, truth: &[f64], n: usize, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, &[0x636f_6e6a]);
        let y = DMatrix::from_fn(n, truth.len(), |_, k| truth[k] + noise_sd * r.sample::<f64, _>(StandardNormal));
        Self::new(prior_mean, prior_sd, noise_sd, &y)
    }

    fn a(&self) -> f64 {
        self.n as f64 / (2.0 * self.noise_sd * self.noise_sd)
    }

    fn const_term(&self) -> f64 {
        let s2 = self.noise_sd * self.noise_sd;
        let d = self.prior_mean.len() as f64;
        -0.5 * self.n as f64 * d * (2.0 * std::f64::consts::PI * s2).ln() - self.ss.iter().sum::<f64>() / (2.0 * s2)
    }

    /// Mean and variance of each coordinate under `p_t`.
    pub fn tempered_moments(&self, t: f64) -> Vec<(f64, f64)> {
        let s2 = self.noise_sd * self.noise_sd;
        let p0 = 1.0 / (self.prior_sd * self.prior_sd);
        let tau = p0 + t * self.n as f64 / s2;
        self.prior_mean
            .iter()
            .zip(&self.ybar)
            .map(|(m0, yb)| ((m0 * p0 + t * self.n as f64 * yb / s2) / tau, 1.0 / tau))
            .collect()
    }

    /// `E_t[log ℓ]` in closed form.
    pub fn expected_log_like(&self, t: f64) -> f64 {
        let a = self.a();
        self.const_term()
            - self
                .tempered_moments(t)
                .iter()
                .zip(&self.ybar)
                .map(|((m, v), yb)| a * ((m - yb).powi(2) + v))
                .sum::<f64>()
    }

    /// `Var_t[log ℓ]` in closed form.
    pub fn variance_log_like(&self, t: f64) -> f64 {
        let a = self.a();
        self.tempered_moments(t)
            .iter()
            .zip(&self.ybar)
            .map(|((m, v), yb)| {
                let dl = m - yb;
                a * a * (2.0 * v * v + 4.0 * dl * dl * v)
            })
            .sum()
    }

    /// Exact draws from `p_t`.
    pub fn sample_tempered(&self, t: f64, n: usize, seed: u64) -> DMatrix<f64> {
        let mom = self.tempered_moments(t);
        let mut r = rng::stream(seed, &[0x7465_6d70]);
        DMatrix::from_fn(n, mom.len(), |_, k| mom[k].0 + mom[k].1.sqrt() * r.sample::<f64, _>(StandardNormal))
    }
}

impl TargetModel for ConjugateGaussian {
    fn name(&self) -> &str {
        "conjugate_gaussian"
    }

    fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.prior_mean).map(|(x, m)| log_normal_pdf(*x, *m, self.prior_sd)).sum()
    }

    fn grad_log_prior(&self, theta: &[f64]) -> Vec<f64> {
        let p = 1.0 / (self.prior_sd * self.prior_sd);
        theta.iter().zip(&self.prior_mean).map(|(x, m)| -(x - m) * p).collect()
    }

    fn log_like(&self, theta: &[f64]) -> f64 {
        let a = self.a();
        self.const_term() - a * theta.iter().zip(&self.ybar).map(|(x, yb)| (x - yb).powi(2)).sum::<f64>()
    }

    fn grad_log_like(&self, theta: &[f64]) -> Vec<f64> {
        let a = self.a();
        theta.iter().zip(&self.ybar).map(|(x, yb)| -2.0 * a * (x - yb)).collect()
    }

    fn sample_prior(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, &[0x7072_696f_72]);
        DMatrix::from_fn(n, self.dim(), |_, k| self.prior_mean[k] + self.prior_sd * r.sample::<f64, _>(StandardNormal))
    }

    fn boundary_note(&self) -> &'static str {
        "gaussian prior and likelihood give gaussian tails at every temperature"
    }

    fn log_evidence(&self) -> Option<f64> {
        let s2 = self.noise_sd * self.noise_sd;
        let v0 = self.prior_sd * self.prior_sd;
        let n = self.n as f64;
        let mut out = 0.0;
        for k in 0..self.dim() {
            out += -0.5 * n * (2.0 * std::f64::consts::PI * s2).ln() - self.ss[k] / (2.0 * s2)
                + 0.5 * (s2 / (s2 + n * v0)).ln()
                - n * (self.ybar[k] - self.prior_mean[k]).powi(2) / (2.0 * (s2 + n * v0));
        }
        Some(out)
    }
}
