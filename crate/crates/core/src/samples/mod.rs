//! Weighted samples with log-target gradients.

mod archive;
mod standardise;
mod transform;

pub use archive::{read_archive, read_archive_from, write_archive, write_archive_to};
pub(crate) use archive::fmt_f64;
pub use standardise::{standardise, Standardisation, Standardised};
pub(crate) use standardise::weighted_mean_sd;
pub use transform::{inverse_transform_samples, transform_samples, CoordTransform, ParameterTransform};
#[allow(unused_imports)]
pub(crate) use transform::{sigmoid, softplus};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance on `|Σ w − 1|` for weight vectors.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// `N` weighted draws in `d` dimensions with the gradient of the log target
/// at each draw.
///
/// Gradient columns may be marked unavailable (see
/// [`SampleSet::with_partial_gradients`]); those entries hold `NaN` and are
/// never read by the covariate builders when the polynomial basis does not
/// involve them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    theta: DMatrix<f64>,
    grad: DMatrix<f64>,
    grad_available: Vec<bool>,
    weights: Vec<f64>,
    log_like: Option<Vec<f64>>,
    log_prior: Option<Vec<f64>>,
}

impl SampleSet {
    /// Builds a sample set, validating shapes, finiteness and weights.
    pub fn new(theta: DMatrix<f64>, grad: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        let d = theta.ncols();
        Self::build(theta, grad, vec![true; d], weights)
    }

    /// Uniformly weighted sample set.
    pub fn uniform(theta: DMatrix<f64>, grad: DMatrix<f64>) -> Result<Self> {
        let n = theta.nrows();
        if n == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        Self::new(theta, grad, vec![1.0 / n as f64; n])
    }

    /// Sample set whose weights are given up to a constant on the log scale.
    pub fn from_log_weights(
        theta: DMatrix<f64>,
        grad: DMatrix<f64>,
        log_weights: &[f64],
    ) -> Result<Self> {
        let weights = normalise_log_weights(log_weights)
            .ok_or_else(|| Error::invalid("log-weights are all -inf or non-finite"))?;
        Self::new(theta, grad, weights)
    }

    /// Sample set where only the gradient columns listed in `available` were
    /// computed; `grad_cols` holds them in that order.
    pub fn with_partial_gradients(
        theta: DMatrix<f64>,
        grad_cols: &DMatrix<f64>,
        available: &[usize],
        weights: Vec<f64>,
    ) -> Result<Self> {
        let (n, d) = theta.shape();
        if grad_cols.shape() != (n, available.len()) {
            return Err(Error::invalid(format!(
                "gradient block is {:?}, expected ({n}, {})",
                grad_cols.shape(),
                available.len()
            )));
        }
        let mut grad = DMatrix::from_element(n, d, f64::NAN);
        let mut mask = vec![false; d];
        for (col, &k) in available.iter().enumerate() {
            if k >= d || mask[k] {
                return Err(Error::invalid(format!("bad gradient column index {k}")));
            }
            mask[k] = true;
            grad.set_column(k, &grad_cols.column(col));
        }
        Self::build(theta, grad, mask, weights)
    }

    fn build(
        theta: DMatrix<f64>,
        grad: DMatrix<f64>,
        grad_available: Vec<bool>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let (n, d) = theta.shape();
        if n == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if d == 0 {
            return Err(Error::invalid("samples must have at least one dimension"));
        }
        if grad.shape() != (n, d) {
            return Err(Error::invalid(format!(
                "gradient matrix is {:?}, expected ({n}, {d})",
                grad.shape()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter value"));
        }
        for (k, &avail) in grad_available.iter().enumerate() {
            if avail && grad.column(k).iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite gradient in column {k}")));
            }
        }
        validate_weights(&weights, n)?;
        Ok(Self {
            theta,
            grad,
            grad_available,
            weights,
            log_like: None,
            log_prior: None,
        })
    }

    /// Attaches cached log-likelihood and log-prior values.
    pub fn with_log_densities(mut self, log_like: Vec<f64>, log_prior: Vec<f64>) -> Result<Self> {
        let n = self.count();
        if log_like.len() != n || log_prior.len() != n {
            return Err(Error::invalid("log-density vectors must have one entry per sample"));
        }
        if log_like.iter().chain(&log_prior).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite log-density value"));
        }
        self.log_like = Some(log_like);
        self.log_prior = Some(log_prior);
        Ok(self)
    }

    pub fn count(&self) -> usize {
        self.theta.nrows()
    }

    pub fn dim(&self) -> usize {
        self.theta.ncols()
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn grad_log_target(&self) -> &DMatrix<f64> {
        &self.grad
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_like(&self) -> Option<&[f64]> {
        self.log_like.as_deref()
    }

    pub fn log_prior(&self) -> Option<&[f64]> {
        self.log_prior.as_deref()
    }

    pub fn has_gradient(&self, k: usize) -> bool {
        self.grad_available.get(k).copied().unwrap_or(false)
    }

    pub fn has_all_gradients(&self) -> bool {
        self.grad_available.iter().all(|&a| a)
    }

    /// True when every weight equals `1/N` exactly.
    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.count() as f64;
        self.weights.iter().all(|&w| w == u)
    }

    /// Returns a copy with the same draws and new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights, self.count())?;
        let mut out = self.clone();
        out.weights = weights;
        Ok(out)
    }

    /// Rows `idx` (in that order) with their weights renormalised.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let theta = self.theta.select_rows(idx);
        let grad = self.grad.select_rows(idx);
        let raw: Vec<f64> = idx.iter().map(|&i| self.weights[i]).collect();
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("selected rows carry zero total weight"));
        }
        let weights = raw.iter().map(|w| w / total).collect();
        let pick = |v: &Option<Vec<f64>>| v.as_ref().map(|v| idx.iter().map(|&i| v[i]).collect());
        Ok(Self {
            theta,
            grad,
            grad_available: self.grad_available.clone(),
            weights,
            log_like: pick(&self.log_like),
            log_prior: pick(&self.log_prior),
        })
    }

    /// Row `i` of the parameter matrix as an owned vector.
    pub fn theta_row(&self, i: usize) -> Vec<f64> {
        self.theta.row(i).iter().copied().collect()
    }

    pub(crate) fn parts_mut(
        &mut self,
    ) -> (&mut DMatrix<f64>, &mut DMatrix<f64>, &mut Option<Vec<f64>>) {
        (&mut self.theta, &mut self.grad, &mut self.log_prior)
    }
}

/// Values `φ(θ_i)` of an integrand at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrandValues {
    pub values: Vec<f64>,
    pub label: String,
}

impl IntegrandValues {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite integrand value"));
        }
        Ok(Self {
            values,
            label: label.into(),
        })
    }

    /// Evaluates `f` on every row of `s`.
    pub fn from_fn(s: &SampleSet, label: impl Into<String>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..s.count()).map(|i| f(&s.theta_row(i))).collect();
        Self::new(label, values)
    }

    /// Marginal `θ[k]`.
    pub fn coordinate(s: &SampleSet, k: usize) -> Result<Self> {
        if k >= s.dim() {
            return Err(Error::invalid(format!("coordinate {k} out of range")));
        }
        Self::new(format!("theta_{}", k + 1), s.theta().column(k).iter().copied().collect())
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.values.len() != n {
            return Err(Error::invalid(format!(
                "integrand has {} values for {n} samples",
                self.values.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn validate_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::invalid(format!("{} weights for {n} samples", w.len())));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::invalid(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Normalises log-weights with log-sum-exp. `None` when every entry is `-inf`.
pub fn normalise_log_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || log_w.iter().any(|v| v.is_nan()) {
        return None;
    }
    let unnorm: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Some(unnorm.into_iter().map(|u| u / total).collect())
}

/// `log Σ exp(a_i)`.
pub fn log_sum_exp(a: &[f64]) -> f64 {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + a.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// `Σ w_i v_i`.
pub fn weighted_mean(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Uniform weights of length `n`.
pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SampleSet {
        let theta = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let grad = -theta.clone();
        SampleSet::uniform(theta, grad).unwrap()
    }

    #[test]
    fn rejects_bad_weights() {
        let s = small();
        assert!(s.with_weights(vec![0.5, 0.5, 0.5]).is_err());
        assert!(s.with_weights(vec![1.5, -0.5, 0.0]).is_err());
        assert!(s.with_weights(vec![0.5, 0.5]).is_err());
        assert!(s.with_weights(vec![0.25, 0.25, 0.5]).is_ok());
    }

    #[test]
    fn rejects_non_finite() {
        let theta = DMatrix::from_row_slice(2, 1, &[0.0, f64::NAN]);
        let grad = DMatrix::zeros(2, 1);
        assert!(SampleSet::uniform(theta, grad).is_err());
    }

    #[test]
    fn partial_gradients_mask_columns() {
        let theta = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let g = DMatrix::from_row_slice(2, 1, &[7.0, 8.0]);
        let s = SampleSet::with_partial_gradients(theta, &g, &[1], uniform_weights(2)).unwrap();
        assert!(s.has_gradient(1));
        assert!(!s.has_gradient(0));
        assert!(s.grad_log_target()[(0, 0)].is_nan());
        assert_eq!(s.grad_log_target()[(1, 1)], 8.0);
    }

    #[test]
    fn select_rows_renormalises() {
        let s = small().with_weights(vec![0.2, 0.3, 0.5]).unwrap();
        let t = s.select_rows(&[2, 0]).unwrap();
        assert!((t.weights()[0] - 0.5 / 0.7).abs() < 1e-15);
        assert_eq!(t.theta()[(0, 0)], 4.0);
    }

    #[test]
    fn log_weights_normalise_stably() {
        let w = normalise_log_weights(&[-1000.0, -1000.0 + 4f64.ln()]).unwrap();
        assert!((w[0] - 0.2).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15);
        assert!(normalise_log_weights(&[f64::NEG_INFINITY; 3]).is_none());
        assert!((log_sum_exp(&[700.0, 700.0]) - (700.0 + 2f64.ln())).abs() < 1e-12);
    }
}
