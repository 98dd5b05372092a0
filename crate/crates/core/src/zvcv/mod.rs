//! Zero-variance control variates built from polynomial Stein covariates.

mod select;

pub use select::{crossval_select, Candidate, CrossvalConfig, CvSelectionResult, TraceEntry};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polybasis::{build_design_matrix, enumerate_exponents, SubsetSpec, DEFAULT_MAX_ROWS};
use crate::regression::{cv_lambda, fit, CvConfig, Penalty, RegressionFit};
use crate::rng;
use crate::samples::{IntegrandValues, SampleSet};

/// Combined (fit and evaluate on the same draws) or split estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Combined,
    Split,
}

/// One ZV-CV method: polynomial order, penalty, optional coordinate subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZvSpec {
    pub q: usize,
    pub penalty: Penalty,
    /// Fixed penalty; `None` picks it by k-fold CV for penalised methods.
    pub lambda: Option<f64>,
    pub subset: Option<SubsetSpec>,
    pub estimator: Estimator,
}

impl ZvSpec {
    pub fn new(q: usize, penalty: Penalty) -> Self {
        ZvSpec { q, penalty, lambda: None, subset: None, estimator: Estimator::Combined }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn with_subset(mut self, s: SubsetSpec) -> Self {
        self.subset = Some(s);
        self
    }

    pub fn split(mut self) -> Self {
        self.estimator = Estimator::Split;
        self
    }

    /// Short label such as `l-ZV2` or `sub3-ZV1`.
    pub fn label(&self) -> String {
        let pre = match self.penalty {
            Penalty::Ols => "",
            Penalty::Lasso => "l-",
            Penalty::Ridge => "r-",
        };
        let sub = match &self.subset {
            Some(s) => format!("sub{}-", s.len()),
            None => String::new(),
        };
        let split = if self.estimator == Estimator::Split { "-split" } else { "" };
        format!("{sub}{pre}ZV{}{split}", self.q)
    }
}

/// Shared settings for ZV-CV fits.
#[derive(Debug, Clone, PartialEq)]
pub struct ZvConfig {
    /// Seeds the split partition and the λ folds.
    pub seed: u64,
    pub cv: CvConfig,
    pub max_rows: usize,
}

impl Default for ZvConfig {
    fn default() -> Self {
        ZvConfig { seed: 0, cv: CvConfig::default(), max_rows: DEFAULT_MAX_ROWS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZvResult {
    pub estimate: f64,
    /// One fit for the combined estimator, one per half for the split one.
    pub fits: Vec<RegressionFit>,
}

impl ZvResult {
    pub fn fit(&self) -> &RegressionFit {
        &self.fits[0]
    }
}

/// Stein design matrix of `spec` evaluated at every draw of `s`.
pub fn design_matrix(s: &SampleSet, spec: &ZvSpec, max_rows: usize) -> Result<DMatrix<f64>> {
    let a = enumerate_exponents(s.dim(), spec.q, spec.subset.as_ref(), max_rows)?;
    build_design_matrix(s, &a)
}

/// Fits the regression part of `spec` on `(x, f, w)`.
pub(crate) fn fit_spec(
    x: &DMatrix<f64>,
    f: &[f64],
    w: &[f64],
    spec: &ZvSpec,
    cv: &CvConfig,
) -> Result<RegressionFit> {
    match (spec.penalty, spec.lambda) {
        (Penalty::Ols, _) => fit(x, f, w, Penalty::Ols, 0.0, &cv.fit),
        (p, Some(l)) => fit(x, f, w, p, l, &cv.fit),
        (p, None) => {
            let folds = cv.folds.min(x.nrows());
            if folds < 2 {
                return Err(Error::InsufficientSamples { needed: 2, got: x.nrows() });
            }
            let cfg = CvConfig { folds, ..cv.clone() };
            Ok(cv_lambda(x, f, w, p, &cfg)?.1)
        }
    }
}

fn renormalised(idx: &[usize], w: &[f64]) -> Vec<f64> {
    let total: f64 = idx.iter().map(|&i| w[i]).sum();
    idx.iter().map(|&i| w[i] / total).collect()
}

/// Estimates `E[φ]` with the ZV-CV method `spec`.
pub fn zvcv_estimate(s: &SampleSet, phi: &IntegrandValues, spec: &ZvSpec, cfg: &ZvConfig) -> Result<ZvResult> {
    let n = s.count();
    phi.check_len(n)?;
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let x = design_matrix(s, spec, cfg.max_rows)?;
    let w = s.weights();
    let f = &phi.values;
    let cv = CvConfig { seed: cfg.seed, ..cfg.cv.clone() };
    match spec.estimator {
        Estimator::Combined => {
            let fit = fit_spec(&x, f, w, spec, &cv)?;
            // c = f̄ + βᵀx̄, which is Σ W (φ + xᵀβ).
            Ok(ZvResult { estimate: fit.intercept, fits: vec![fit] })
        }
        Estimator::Split => {
            if n < 4 {
                return Err(Error::InsufficientSamples { needed: 4, got: n });
            }
            let perm = rng::permutation(n, cfg.seed, &[0x7a76_7370_6c69_74]);
            let (a, b) = perm.split_at(n / 2);
            let mut halves = [a.to_vec(), b.to_vec()];
            for h in &mut halves {
                h.sort_unstable();
            }
            let mut total = 0.0;
            let mut fits = Vec::with_capacity(2);
            for (train, test) in [(&halves[0], &halves[1]), (&halves[1], &halves[0])] {
                let wt = renormalised(train, w);
                let we = renormalised(test, w);
                if wt.iter().any(|v| !v.is_finite()) || we.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("a split half carries zero total weight"));
                }
                let ft: Vec<f64> = train.iter().map(|&i| f[i]).collect();
                let fit = fit_spec(&x.select_rows(train.iter()), &ft, &wt, spec, &cv)?;
                let fe: Vec<f64> = test.iter().map(|&i| f[i]).collect();
                total += fit.cv_estimate(&x.select_rows(test.iter()), &fe, &we);
                fits.push(fit);
            }
            Ok(ZvResult { estimate: 0.5 * total, fits })
        }
    }
}

/// ZV-CV with the polynomial restricted to the coordinates in `subset`; only
/// those gradient columns are read.
pub fn apriori_estimate(
    s: &SampleSet,
    phi: &IntegrandValues,
    subset: &SubsetSpec,
    inner: &ZvSpec,
    cfg: &ZvConfig,
) -> Result<ZvResult> {
    let spec = ZvSpec { subset: Some(subset.clone()), ..inner.clone() };
    zvcv_estimate(s, phi, &spec, cfg)
}
