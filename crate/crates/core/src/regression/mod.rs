//! Penalised least squares for control-variate coefficients.
//!
//! Every fit uses the sign convention `f ≈ c − Xβ`, so the control-variate
//! estimate is `Σ W_i (f_i + x_iᵀβ)`. Covariates and response are centred by
//! their weighted means and (by default) scaled by their weighted standard
//! deviations before solving; the intercept is never penalised.
//!
//! Penalised objectives on the standardised scale are
//!
//! ```text
//! ridge:  ½ Σ w_i r_i² + ½ λ ‖β_s‖₂²
//! lasso:  ½ Σ w_i r_i² + λ ‖β_s‖₁
//! ```
//!
//! with weights normalised to sum to one.

mod cv;
mod solvers;

pub use cv::{cv_lambda, default_lambda_grid, lambda_max, CvConfig};
pub use solvers::{lasso_coordinate_descent, soft_threshold, LassoOptions, RidgeSolver};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samples::{standardise, weighted_mean_sd, Standardised};

/// Regression method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    Ols,
    Lasso,
    Ridge,
}

impl Penalty {
    pub fn name(self) -> &'static str {
        match self {
            Penalty::Ols => "ols",
            Penalty::Ridge => "ridge",
            Penalty::Lasso => "lasso",
        }
    }
}

/// How covariates and response are scaled before solving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    /// Centre and divide by the weighted standard deviation.
    #[default]
    Standardise,
    /// Centre only; the penalty acts on raw coefficients.
    CentreOnly,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitOptions {
    pub scaling: Scaling,
    pub lasso: LassoOptions,
}

/// A fitted regression `f ≈ c − Xβ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub intercept: f64,
    /// Coefficients on the original scale; zero for dropped columns.
    pub beta: Vec<f64>,
    /// Coefficients on the standardised scale; zero for dropped columns.
    pub beta_s: Vec<f64>,
    pub method: Penalty,
    pub lambda: f64,
    pub cv_mse: Option<f64>,
    /// Columns removed for having zero variance.
    pub dropped: Vec<usize>,
    pub rank_deficient: bool,
    /// Coordinate-descent sweeps (LASSO only).
    pub iterations: usize,
}

impl RegressionFit {
    /// Fitted response `c − xᵀβ` at one covariate row.
    pub fn predict_row(&self, x: impl IntoIterator<Item = f64>) -> f64 {
        self.intercept - x.into_iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `Xβ` for every row of `x`.
    pub fn control_term(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * DVector::from_column_slice(&self.beta)
    }

    /// Weighted control-variate estimate `Σ w_i (f_i + x_iᵀβ)`.
    pub fn cv_estimate(&self, x: &DMatrix<f64>, f: &[f64], w: &[f64]) -> f64 {
        let h = self.control_term(x);
        f.iter().zip(h.iter()).zip(w).map(|((fi, hi), wi)| wi * (fi + hi)).sum()
    }

    pub fn n_nonzero(&self) -> usize {
        self.beta_s.iter().filter(|&&b| b != 0.0).count()
    }
}

/// Normalised copy of `w`, rejecting negative, non-finite or all-zero input.
pub(crate) fn normalised_weights(w: &[f64], n: usize) -> Result<Vec<f64>> {
    if w.len() != n {
        return Err(Error::invalid(format!("{} weights for {n} rows", w.len())));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("weights are all zero"));
    }
    Ok(w.iter().map(|v| v / total).collect())
}

fn prepare(x: &DMatrix<f64>, f: &[f64], w: &[f64], scaling: Scaling) -> Result<(Standardised, Vec<f64>)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if f.len() != n {
        return Err(Error::invalid(format!("response has {} values for {n} rows", f.len())));
    }
    let w = normalised_weights(w, n)?;
    let mut st = standardise(x, f, &w)?;
    if scaling == Scaling::CentreOnly {
        let stats = &mut st.stats;
        for (out, &j) in stats.retained.iter().enumerate() {
            let sd = stats.covariate_sds[j];
            st.x.column_mut(out).scale_mut(sd);
            stats.covariate_sds[j] = 1.0;
        }
        st.f.scale_mut(stats.response_sd);
        stats.response_sd = if stats.response_sd > 0.0 { 1.0 } else { 0.0 };
        if stats.response_sd == 0.0 {
            st.f.fill(0.0);
        }
    }
    Ok((st, w))
}

fn assemble(
    st: &Standardised,
    gamma_s: &[f64],
    method: Penalty,
    lambda: f64,
    rank_deficient: bool,
    iterations: usize,
) -> RegressionFit {
    let stats = &st.stats;
    let j_total = stats.covariate_means.len();
    let mut beta_s = vec![0.0; j_total];
    for (g, &j) in gamma_s.iter().zip(&stats.retained) {
        beta_s[j] = -g;
    }
    let retained_beta_s: Vec<f64> = gamma_s.iter().map(|g| -g).collect();
    let beta = stats.unscale(&retained_beta_s);
    let intercept = stats.response_mean
        + beta
            .iter()
            .zip(&stats.covariate_means)
            .map(|(b, m)| b * m)
            .sum::<f64>();
    RegressionFit {
        intercept,
        beta,
        beta_s,
        method: if lambda == 0.0 { Penalty::Ols } else { method },
        lambda,
        cv_mse: None,
        dropped: stats.dropped.clone(),
        rank_deficient,
        iterations,
    }
}

/// Weighted least squares; minimum-norm on the standardised scale when the
/// problem is rank deficient.
pub fn fit_ols(x: &DMatrix<f64>, f: &[f64], w: &[f64]) -> Result<RegressionFit> {
    fit(x, f, w, Penalty::Ols, 0.0, &FitOptions::default())
}

/// Ridge regression on standardised variables.
pub fn fit_ridge(x: &DMatrix<f64>, f: &[f64], w: &[f64], lambda: f64) -> Result<RegressionFit> {
    fit(x, f, w, Penalty::Ridge, lambda, &FitOptions::default())
}

/// LASSO on standardised variables by cyclic coordinate descent.
pub fn fit_lasso(x: &DMatrix<f64>, f: &[f64], w: &[f64], lambda: f64) -> Result<RegressionFit> {
    fit(x, f, w, Penalty::Lasso, lambda, &FitOptions::default())
}

/// Fits `f ≈ c − Xβ` with the given method and penalty.
pub fn fit(
    x: &DMatrix<f64>,
    f: &[f64],
    w: &[f64],
    method: Penalty,
    lambda: f64,
    opts: &FitOptions,
) -> Result<RegressionFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("penalty must be finite and nonnegative, got {lambda}")));
    }
    let lambda = if method == Penalty::Ols { 0.0 } else { lambda };
    let (st, w) = prepare(x, f, w, opts.scaling)?;
    fit_prepared(&st, &w, method, lambda, opts)
}

pub(crate) fn fit_prepared(
    st: &Standardised,
    w: &[f64],
    method: Penalty,
    lambda: f64,
    opts: &FitOptions,
) -> Result<RegressionFit> {
    let (gamma, rank_deficient, iterations) = solve(&st.x, &st.f, w, method, lambda, &opts.lasso)?;
    Ok(assemble(st, &gamma, method, lambda, rank_deficient, iterations))
}

fn solve(
    x: &DMatrix<f64>,
    f: &DVector<f64>,
    w: &[f64],
    method: Penalty,
    lambda: f64,
    lasso: &LassoOptions,
) -> Result<(Vec<f64>, bool, usize)> {
    if x.ncols() == 0 {
        return Ok((Vec::new(), false, 0));
    }
    match method {
        _ if lambda == 0.0 || method == Penalty::Ols => {
            let (g, rank) = solvers::weighted_min_norm_lstsq(x, f, w);
            Ok((g, rank < x.ncols(), 0))
        }
        Penalty::Ridge => Ok((solvers::ridge_direct(x, f, w, lambda), false, 0)),
        Penalty::Lasso => {
            let out = lasso_coordinate_descent(x, f, w, lambda, None, lasso)?;
            let mut gamma = out.coef;
            if lasso.relaxed {
                let active: Vec<usize> = (0..gamma.len()).filter(|&j| gamma[j] != 0.0).collect();
                if !active.is_empty() {
                    let sub = x.select_columns(&active);
                    let (g, _) = solvers::weighted_min_norm_lstsq(&sub, f, w);
                    for (v, &j) in g.iter().zip(&active) {
                        gamma[j] = *v;
                    }
                }
            }
            Ok((gamma, false, out.sweeps))
        }
        Penalty::Ols => unreachable!(),
    }
}

/// Refits with the intercept held at `intercept`: columns are scaled (per
/// `opts.scaling`) but not centred, and the response is `f − intercept`.
pub fn fit_fixed_intercept(
    x: &DMatrix<f64>,
    f: &[f64],
    w: &[f64],
    intercept: f64,
    method: Penalty,
    lambda: f64,
    opts: &FitOptions,
) -> Result<RegressionFit> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if f.len() != n {
        return Err(Error::invalid("response length mismatch"));
    }
    let w = normalised_weights(w, n)?;
    let lambda = if method == Penalty::Ols { 0.0 } else { lambda };
    let w2: f64 = w.iter().map(|v| v * v).sum();
    let sd_of = |col: &[f64]| weighted_mean_sd(col.iter().copied(), &w, w2).1;
    let (f_scale, col_scale): (f64, Vec<f64>) = match opts.scaling {
        Scaling::Standardise => (
            sd_of(f).max(f64::MIN_POSITIVE),
            (0..x.ncols()).map(|j| sd_of(x.column(j).as_slice())).collect(),
        ),
        Scaling::CentreOnly => (1.0, vec![1.0; x.ncols()]),
    };
    let retained: Vec<usize> = (0..x.ncols()).filter(|&j| col_scale[j] > 0.0 && x.column(j).amax() > 0.0).collect();
    let mut xs = x.select_columns(&retained);
    for (out, &j) in retained.iter().enumerate() {
        xs.column_mut(out).unscale_mut(col_scale[j]);
    }
    let fs = DVector::from_iterator(n, f.iter().map(|v| (v - intercept) / f_scale));
    let (gamma_s, rank_deficient, iterations) = solve(&xs, &fs, &w, method, lambda, &opts.lasso)?;
    let mut beta = vec![0.0; x.ncols()];
    let mut beta_s = vec![0.0; x.ncols()];
    for (g, &j) in gamma_s.iter().zip(&retained) {
        beta_s[j] = -g;
        beta[j] = -g * f_scale / col_scale[j];
    }
    Ok(RegressionFit {
        intercept,
        beta,
        beta_s,
        method: if lambda == 0.0 { Penalty::Ols } else { method },
        lambda,
        cv_mse: None,
        dropped: (0..x.ncols()).filter(|j| !retained.contains(j)).collect(),
        rank_deficient,
        iterations,
    })
}
