//! Per-expectation method selector shared by post-processing and evidence
//! estimation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cf::{cf_cv_bandwidth, cf_estimate, default_bandwidth_grid, KernelSpec};
use crate::error::{Error, Result};
use crate::polybasis::SubsetSpec;
use crate::regression::{fit_fixed_intercept, Penalty};
use crate::samples::{weighted_mean, IntegrandValues, SampleSet};
use crate::zvcv::{crossval_select, design_matrix, zvcv_estimate, Candidate, CrossvalConfig, ZvSpec};

/// How one expectation is estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum Method {
    Vanilla,
    Zv { spec: ZvSpec },
    Crossval { candidates: Vec<Candidate>, max_q: usize },
    /// `kernel = None` uses a gaussian kernel with the bandwidth chosen by
    /// 5-fold CV.
    Cf { kernel: Option<KernelSpec>, lambda: f64 },
}

impl Method {
    pub fn zv(q: usize, penalty: Penalty) -> Self {
        Method::Zv { spec: ZvSpec::new(q, penalty) }
    }

    pub fn crossval() -> Self {
        Method::Crossval {
            candidates: [Penalty::Ols, Penalty::Lasso, Penalty::Ridge].into_iter().map(Candidate::new).collect(),
            max_q: CrossvalConfig::default().max_q,
        }
    }

    pub fn cf() -> Self {
        Method::Cf { kernel: None, lambda: 0.0 }
    }

    pub fn label(&self) -> String {
        match self {
            Method::Vanilla => "vanilla".into(),
            Method::Zv { spec } => spec.label(),
            Method::Crossval { .. } => "crossval".into(),
            Method::Cf { .. } => "CF".into(),
        }
    }

    pub fn is_vanilla(&self) -> bool {
        matches!(self, Method::Vanilla)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn bad(s: &str, why: &str) -> Error {
    Error::invalid(format!("bad method {s:?}: {why}"))
}

/// Parses `vanilla`, `zv:Q=2[:ols|lasso|ridge][:lambda=x][:sub=1,3][:split]`,
/// `crossval[:maxq=4][:ols|lasso|ridge…]` and
/// `cf[:bw=x|:poly=q][:lambda=x]`. Subset indices are 1-based.
impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let head = parts.next().unwrap_or("").to_ascii_lowercase();
        let opts: Vec<(String, Option<String>)> = parts
            .map(|p| match p.split_once('=') {
                Some((k, v)) => (k.trim().to_ascii_lowercase(), Some(v.trim().to_string())),
                None => (p.trim().to_ascii_lowercase(), None),
            })
            .collect();
        let num = |v: &Option<String>, key: &str| -> Result<f64> {
            v.as_deref()
                .and_then(|x| x.parse::<f64>().ok())
                .ok_or_else(|| bad(s, &format!("{key} needs a number")))
        };
        let int = |v: &Option<String>, key: &str| -> Result<usize> {
            v.as_deref()
                .and_then(|x| x.parse::<usize>().ok())
                .ok_or_else(|| bad(s, &format!("{key} needs a nonnegative integer")))
        };
        let penalty = |k: &str| match k {
            "ols" => Some(Penalty::Ols),
            "lasso" => Some(Penalty::Lasso),
            "ridge" => Some(Penalty::Ridge),
            _ => None,
        };
        match head.as_str() {
            "vanilla" if opts.is_empty() => Ok(Method::Vanilla),
            "zv" => {
                let mut spec = ZvSpec::new(1, Penalty::Ols);
                let mut sub: Option<Vec<usize>> = None;
                for (k, v) in &opts {
                    match (k.as_str(), v) {
                        ("q", v) => spec.q = int(v, "Q")?,
                        ("lambda", v) => spec.lambda = Some(num(v, "lambda")?),
                        ("sub", Some(list)) => {
                            let idx = list
                                .split(',')
                                .map(|x| x.trim().parse::<usize>().ok().filter(|&i| i >= 1).map(|i| i - 1))
                                .collect::<Option<Vec<_>>>()
                                .ok_or_else(|| bad(s, "sub needs 1-based indices"))?;
                            sub = Some(idx);
                        }
                        ("split", None) => spec = spec.split(),
                        (p, None) if penalty(p).is_some() => spec.penalty = penalty(p).unwrap(),
                        _ => return Err(bad(s, &format!("unknown option {k:?}"))),
                    }
                }
                if spec.q == 0 {
                    return Err(bad(s, "Q must be at least 1"));
                }
                if let Some(idx) = sub {
                    // Bounds are checked against the data when the basis is built.
                    spec.subset = Some(SubsetSpec::new(idx, usize::MAX).map_err(|e| bad(s, &e.to_string()))?);
                }
                Ok(Method::Zv { spec })
            }
            "crossval" => {
                let mut max_q = CrossvalConfig::default().max_q;
                let mut pens = Vec::new();
                for (k, v) in &opts {
                    match (k.as_str(), v) {
                        ("maxq", v) => max_q = int(v, "maxq")?,
                        (p, None) if penalty(p).is_some() => pens.push(penalty(p).unwrap()),
                        _ => return Err(bad(s, &format!("unknown option {k:?}"))),
                    }
                }
                if max_q == 0 {
                    return Err(bad(s, "maxq must be at least 1"));
                }
                let candidates = if pens.is_empty() {
                    match Method::crossval() {
                        Method::Crossval { candidates, .. } => candidates,
                        _ => unreachable!(),
                    }
                } else {
                    pens.into_iter().map(Candidate::new).collect()
                };
                Ok(Method::Crossval { candidates, max_q })
            }
            "cf" => {
                let mut kernel = None;
                let mut lambda = 0.0;
                for (k, v) in &opts {
                    match k.as_str() {
                        "bw" => kernel = Some(KernelSpec::gaussian(num(v, "bw")?)),
                        "poly" => kernel = Some(KernelSpec::polynomial(int(v, "poly")?)),
                        "lambda" => lambda = num(v, "lambda")?,
                        _ => return Err(bad(s, &format!("unknown option {k:?}"))),
                    }
                }
                Ok(Method::Cf { kernel, lambda })
            }
            _ => Err(bad(s, "expected vanilla, zv, crossval or cf")),
        }
    }
}

/// Parses a comma-separated method list. Commas inside `sub=` lists bind to
/// the preceding method.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let mut out: Vec<String> = Vec::new();
    for tok in s.split(',') {
        let t = tok.trim();
        if t.is_empty() {
            continue;
        }
        let continues_list = t.chars().all(|c| c.is_ascii_digit() || c == ':')
            && out.last().is_some_and(|p| p.rsplit(':').next().is_some_and(|l| l.starts_with("sub=")));
        if continues_list && t.chars().next().is_some_and(|c| c.is_ascii_digit()) {
            let last = out.last_mut().unwrap();
            last.push(',');
            last.push_str(t);
        } else {
            out.push(t.to_string());
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no methods given"));
    }
    out.iter().map(|m| m.parse()).collect()
}

/// Settings shared by every expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSettings {
    pub crossval: CrossvalConfig,
    pub cf_bandwidths: Vec<f64>,
}

impl Default for MethodSettings {
    fn default() -> Self {
        MethodSettings { crossval: CrossvalConfig::default(), cf_bandwidths: default_bandwidth_grid() }
    }
}

/// One expectation estimate with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    /// Weighted sample mean.
    pub raw: f64,
    /// The method that produced `estimate` (the selected one for crossval).
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_nonzero: Option<usize>,
    pub fallback: bool,
}

impl Estimate {
    fn vanilla(raw: f64) -> Self {
        Estimate { estimate: raw, raw, method: "vanilla".into(), q: None, lambda: None, bandwidth: None, n_nonzero: None, fallback: false }
    }
}

/// Estimates `E[φ]` under the weighted sample `s`. `seed` drives every
/// random split used along the way.
pub fn estimate_expectation(s: &SampleSet, phi: &IntegrandValues, method: &Method, settings: &MethodSettings, seed: u64) -> Result<Estimate> {
    Ok(estimate_inner(s, phi, method, settings, seed)?.0)
}

/// The estimate plus the ZV spec that produced it, if any.
fn estimate_inner(
    s: &SampleSet,
    phi: &IntegrandValues,
    method: &Method,
    settings: &MethodSettings,
    seed: u64,
) -> Result<(Estimate, Option<ZvSpec>)> {
    let raw = weighted_mean(&phi.values, s.weights());
    let mut zv_cfg = settings.crossval.zv.clone();
    zv_cfg.seed = seed;
    match method {
        Method::Vanilla => Ok((Estimate::vanilla(raw), None)),
        Method::Zv { spec } => {
            let r = zvcv_estimate(s, phi, spec, &zv_cfg)?;
            let fit = r.fit();
            let est = Estimate {
                estimate: r.estimate,
                raw,
                method: spec.label(),
                q: Some(spec.q),
                lambda: (spec.penalty != Penalty::Ols).then_some(fit.lambda),
                bandwidth: None,
                n_nonzero: Some(fit.n_nonzero()),
                fallback: false,
            };
            Ok((est, Some(spec.clone())))
        }
        Method::Crossval { candidates, max_q } => {
            let cfg = CrossvalConfig { zv: zv_cfg, max_q: *max_q, ..settings.crossval.clone() };
            let (sel, r) = crossval_select(s, phi, candidates, &cfg)?;
            let fit = r.fit();
            let spec = sel.chosen;
            let est = Estimate {
                estimate: r.estimate,
                raw,
                method: spec.label(),
                q: Some(spec.q),
                lambda: (spec.penalty != Penalty::Ols).then_some(fit.lambda),
                bandwidth: None,
                n_nonzero: Some(fit.n_nonzero()),
                fallback: false,
            };
            // Refits of the chosen spec reuse its λ.
            let spec = ZvSpec { lambda: Some(fit.lambda), ..spec };
            Ok((est, Some(spec)))
        }
        Method::Cf { kernel, lambda } => {
            let k = match kernel {
                Some(k) => *k,
                None => KernelSpec::gaussian(cf_cv_bandwidth(s, phi, &settings.cf_bandwidths, *lambda, seed)?),
            };
            let fit = cf_estimate(s, phi, &k, *lambda)?;
            let bandwidth = match k.kind {
                crate::cf::KernelKind::Gaussian { bandwidth } => Some(bandwidth),
                _ => None,
            };
            let est = Estimate {
                estimate: fit.estimate,
                raw,
                method: "CF".into(),
                q: None,
                lambda: Some(*lambda),
                bandwidth,
                n_nonzero: None,
                fallback: false,
            };
            Ok((est, None))
        }
    }
}

/// Like [`estimate_expectation`] but fits on `φ / max|φ|` and rescales.
/// With `positive`, a non-positive result falls back: ZV methods refit with
/// the intercept fixed at the weighted mean; CF (or a fallback that is
/// still non-positive) is replaced by the weighted mean.
pub fn stabilised_cv_expectation(
    s: &SampleSet,
    phi: &IntegrandValues,
    method: &Method,
    settings: &MethodSettings,
    seed: u64,
    positive: bool,
) -> Result<Estimate> {
    let scale = phi.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        let mut e = Estimate::vanilla(0.0);
        e.method = method.label();
        return Ok(e);
    }
    let scaled = IntegrandValues::new(phi.label.clone(), phi.values.iter().map(|v| v / scale).collect())?;
    let mut e = stabilised_scaled(s, &scaled, method, settings, seed, positive)?;
    e.estimate *= scale;
    e.raw *= scale;
    Ok(e)
}

/// Core of the stabilised estimate on an already scaled integrand.
pub(crate) fn stabilised_scaled(
    s: &SampleSet,
    phi: &IntegrandValues,
    method: &Method,
    settings: &MethodSettings,
    seed: u64,
    positive: bool,
) -> Result<Estimate> {
    let (mut e, spec) = estimate_inner(s, phi, method, settings, seed)?;
    if !positive || e.estimate > 0.0 || method.is_vanilla() {
        return Ok(e);
    }
    e.fallback = true;
    if let Some(spec) = spec {
        let x = design_matrix(s, &spec, settings.crossval.zv.max_rows)?;
        let w = s.weights();
        let c = e.raw;
        let lambda = spec.lambda.unwrap_or(e.lambda.unwrap_or(0.0));
        let fit = fit_fixed_intercept(&x, &phi.values, w, c, spec.penalty, lambda, &settings.crossval.zv.cv.fit)?;
        let v = fit.cv_estimate(&x, &phi.values, w);
        if v > 0.0 {
            e.estimate = v;
            return Ok(e);
        }
    }
    e.estimate = e.raw;
    Ok(e)
}
