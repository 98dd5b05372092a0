use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

use super::{design_matrix, fit_spec, renormalised, zvcv_estimate, Estimator, ZvConfig, ZvResult, ZvSpec};
use crate::error::{Error, Result};
use crate::polybasis::SubsetSpec;
use crate::regression::Penalty;
use crate::rng;
use crate::samples::{IntegrandValues, SampleSet};

/// A (penalty, subset) pair whose polynomial order is searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub penalty: Penalty,
    pub subset: Option<SubsetSpec>,
}

impl Candidate {
    pub fn new(penalty: Penalty) -> Self {
        Candidate { penalty, subset: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossvalConfig {
    pub zv: ZvConfig,
    pub min_q: usize,
    pub max_q: usize,
    /// Errors within `tie_tolerance` times the hold-out error of the
    /// constant fit are treated as equal.
    pub tie_tolerance: f64,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        CrossvalConfig { zv: ZvConfig::default(), min_q: 1, max_q: 8, tie_tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub spec: ZvSpec,
    pub cv_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSelectionResult {
    pub chosen: ZvSpec,
    pub cv_error: f64,
    pub trace: Vec<TraceEntry>,
}

fn subset_len(spec: &ZvSpec, d: usize) -> usize {
    spec.subset.as_ref().map_or(d, |s| s.len())
}

/// Two-fold hold-out error of `spec`: the squared residuals summed over the
/// held-out half (weights rescaled to average one) and averaged over folds.
fn two_fold_error(
    s: &SampleSet,
    f: &[f64],
    spec: &ZvSpec,
    halves: &[Vec<usize>; 2],
    cfg: &ZvConfig,
) -> Result<f64> {
    let x = design_matrix(s, spec, cfg.max_rows)?;
    let w = s.weights();
    let mut total = 0.0;
    for (train, test) in [(&halves[0], &halves[1]), (&halves[1], &halves[0])] {
        let wt = renormalised(train, w);
        let ft: Vec<f64> = train.iter().map(|&i| f[i]).collect();
        let xt = x.select_rows(train.iter());
        let cv = crate::regression::CvConfig {
            folds: cfg.cv.folds.min(train.len()),
            seed: cfg.seed,
            ..cfg.cv.clone()
        };
        let fit = fit_spec(&xt, &ft, &wt, spec, &cv)?;
        let we = renormalised(test, w);
        let m = test.len() as f64;
        total += test
            .iter()
            .zip(&we)
            .map(|(&i, wi)| {
                let r = f[i] - fit.predict_row(x.row(i).iter().copied());
                m * wi * r * r
            })
            .sum::<f64>();
    }
    let err = 0.5 * total;
    if !err.is_finite() {
        return Err(Error::invalid("non-finite cross-validation error"));
    }
    Ok(err)
}

fn constant_error(f: &[f64], w: &[f64], halves: &[Vec<usize>; 2]) -> f64 {
    let mut total = 0.0;
    for (train, test) in [(&halves[0], &halves[1]), (&halves[1], &halves[0])] {
        let wt = renormalised(train, w);
        let c: f64 = train.iter().zip(&wt).map(|(&i, wi)| wi * f[i]).sum();
        let we = renormalised(test, w);
        let m = test.len() as f64;
        total += test.iter().zip(&we).map(|(&i, wi)| m * wi * (f[i] - c).powi(2)).sum::<f64>();
    }
    0.5 * total
}

/// Picks the polynomial order, penalty and subset by two-fold
/// cross-validation, then refits the winner on all draws.
pub fn crossval_select(
    s: &SampleSet,
    phi: &IntegrandValues,
    candidates: &[Candidate],
    cfg: &CrossvalConfig,
) -> Result<(CvSelectionResult, ZvResult)> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to select from"));
    }
    let n = s.count();
    phi.check_len(n)?;
    if n < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: n });
    }
    if cfg.min_q == 0 || cfg.max_q < cfg.min_q {
        return Err(Error::invalid("need 1 <= min_q <= max_q"));
    }
    let f = &phi.values;
    let perm = rng::permutation(n, cfg.zv.seed, &[0x7a76_6376_7365_6c]);
    let (a, b) = perm.split_at(n / 2);
    let mut halves = [a.to_vec(), b.to_vec()];
    for h in &mut halves {
        h.sort_unstable();
    }
    let scale = constant_error(f, s.weights(), &halves);
    let tie = cfg.tie_tolerance * scale.max(f64::MIN_POSITIVE);

    let traces: Vec<Vec<TraceEntry>> = candidates
        .par_iter()
        .map(|cand| {
            let mut trace = Vec::new();
            let mut prev: Option<f64> = None;
            for q in cfg.min_q..=cfg.max_q {
                let spec = ZvSpec {
                    q,
                    penalty: cand.penalty,
                    lambda: None,
                    subset: cand.subset.clone(),
                    estimator: Estimator::Combined,
                };
                match two_fold_error(s, f, &spec, &halves, &cfg.zv) {
                    Ok(err) => {
                        debug!("crossval {}: {err:e}", spec.label());
                        trace.push(TraceEntry { spec, cv_error: err });
                        if let Some(p) = prev {
                            if err >= p - tie {
                                break;
                            }
                        }
                        prev = Some(err);
                    }
                    Err(e) => {
                        if q == cfg.min_q {
                            warn!("crossval candidate {} excluded: {e}", spec.label());
                        } else {
                            debug!("crossval {} stopped at Q = {q}: {e}", spec.label());
                        }
                        break;
                    }
                }
            }
            trace
        })
        .collect();
    let trace: Vec<TraceEntry> = traces.into_iter().flatten().collect();
    if trace.is_empty() {
        return Err(Error::invalid("every cross-validation candidate failed"));
    }
    let best = trace.iter().map(|t| t.cv_error).fold(f64::INFINITY, f64::min);
    let d = s.dim();
    let chosen = trace
        .iter()
        .filter(|t| t.cv_error <= best + tie)
        .min_by(|x, y| {
            x.spec
                .q
                .cmp(&y.spec.q)
                .then(x.spec.penalty.cmp(&y.spec.penalty))
                .then(subset_len(&x.spec, d).cmp(&subset_len(&y.spec, d)))
                .then(x.cv_error.partial_cmp(&y.cv_error).unwrap_or(Ordering::Equal))
        })
        .expect("trace is nonempty")
        .clone();
    let result = zvcv_estimate(s, phi, &chosen.spec, &cfg.zv)?;
    Ok((CvSelectionResult { chosen: chosen.spec, cv_error: chosen.cv_error, trace }, result))
}
