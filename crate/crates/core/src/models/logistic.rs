use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{log_normal_pdf, TargetModel};
use crate::error::{Error, Result};
use crate::rng;
use crate::samples::{sigmoid, softplus};

/// Bayesian logistic regression with independent normal priors.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    x: DMatrix<f64>,
    y: DVector<f64>,
    prior_sd: Vec<f64>,
}

impl LogisticModel {
    /// `y` must be 0/1. `prior_sd` has one entry per column of `x`.
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, prior_sd: Vec<f64>) -> Result<Self> {
        let (n, d) = x.shape();
        if y.len() != n || n == 0 {
            return Err(Error::invalid(format!("{} responses for {n} design rows", y.len())));
        }
        if prior_sd.len() != d || d == 0 {
            return Err(Error::invalid("need one prior sd per column"));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("responses must be coded 0/1"));
        }
        if prior_sd.iter().any(|&s| !(s > 0.0)) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("prior sds must be positive and the design finite"));
        }
        Ok(LogisticModel { x, y: DVector::from_vec(y), prior_sd })
    }

    /// Priors `N(0, 20²)` for the first (intercept) column and `N(0, 5²)`
    /// for the rest.
    pub fn default_priors(d: usize) -> Vec<f64> {
        (0..d).map(|k| if k == 0 { 20.0 } else { 5.0 }).collect()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn response(&self) -> &[f64] {
        self.y.as_slice()
    }

    fn eta(&self, theta: &[f64]) -> DVector<f64> {
        &self.x * DVector::from_column_slice(theta)
    }
}

/// Centres each raw predictor, scales it to standard deviation 0.5 and
/// prepends an intercept column.
pub fn standardise_predictors(raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = raw.shape();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mut out = DMatrix::from_element(n, p + 1, 1.0);
    for k in 0..p {
        let col = raw.column(k);
        let m = col.mean();
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::invalid(format!("predictor {k} is constant")));
        }
        for i in 0..n {
            out[(i, k + 1)] = 0.5 * (raw[(i, k)] - m) / sd;
        }
    }
    Ok(out)
}

/// Simulated data set with `n` observations and `d` coefficients (intercept
/// included), generated from a fixed seed.
pub fn synthetic_logistic(n: usize, d: usize, seed: u64) -> Result<LogisticModel> {
    if d < 2 {
        return Err(Error::invalid("synthetic logistic model needs d >= 2"));
    }
    let mut r = rng::stream(seed, &[0x6c6f_6769_74]);
    let raw = DMatrix::from_fn(n, d - 1, |_, _| r.sample::<f64, _>(StandardNormal));
    let x = standardise_predictors(&raw)?;
    let truth: Vec<f64> = (0..d).map(|k| if k == 0 { 0.3 } else { [1.5, -1.0, 0.7, 0.0][(k - 1) % 4] }).collect();
    let eta = &x * DVector::from_vec(truth);
    let y = eta.iter().map(|e| if r.random::<f64>() < sigmoid(*e) { 1.0 } else { 0.0 }).collect();
    LogisticModel::new(x, y, LogisticModel::default_priors(d))
}

impl TargetModel for LogisticModel {
    fn name(&self) -> &str {
        "logistic"
    }

    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.prior_sd).map(|(t, s)| log_normal_pdf(*t, 0.0, *s)).sum()
    }

    fn grad_log_prior(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.prior_sd).map(|(t, s)| -t / (s * s)).collect()
    }

    fn log_like(&self, theta: &[f64]) -> f64 {
        self.eta(theta).iter().zip(self.y.iter()).map(|(e, y)| y * e - softplus(*e)).sum()
    }

    fn grad_log_like(&self, theta: &[f64]) -> Vec<f64> {
        let r = DVector::from_iterator(
            self.y.len(),
            self.eta(theta).iter().zip(self.y.iter()).map(|(e, y)| y - sigmoid(*e)),
        );
        self.x.tr_mul(&r).iter().copied().collect()
    }

    fn sample_prior(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, &[0x7072_696f_72]);
        DMatrix::from_fn(n, self.dim(), |_, k| self.prior_sd[k] * r.sample::<f64, _>(StandardNormal))
    }

    fn boundary_note(&self) -> &'static str {
        "normal priors with a bounded log-likelihood gradient give gaussian tails"
    }
}
