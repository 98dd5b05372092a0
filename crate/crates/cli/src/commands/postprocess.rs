use std::time::Instant;

use serde::{Deserialize, Serialize};
use zvcv::evidence::{estimate_expectation, parse_methods, Estimate, MethodSettings};
use zvcv::rng;
use zvcv::samples::{read_archive, IntegrandValues, SampleSet};
use rand::RngCore;

use super::load_run;
use crate::output::{emit_json, seconds, timing_path};
use crate::{CliError, CliResult, PostprocessArgs};

/// An integrand over the columns of `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrand {
    Coordinate(usize),
    Square(usize),
}

impl Integrand {
    pub fn label(&self) -> String {
        match self {
            Integrand::Coordinate(k) => format!("theta_{}", k + 1),
            Integrand::Square(k) => format!("theta_{}^2", k + 1),
        }
    }

    pub fn values(&self, s: &SampleSet) -> zvcv::Result<IntegrandValues> {
        match *self {
            Integrand::Coordinate(k) => IntegrandValues::coordinate(s, k),
            Integrand::Square(k) => {
                let c = IntegrandValues::coordinate(s, k)?;
                IntegrandValues::new(self.label(), c.values.iter().map(|v| v * v).collect())
            }
        }
    }
}

/// Parses `mean`, `square`, `theta:k` and `square:k` (1-based) for a
/// `d`-dimensional sample.
pub fn parse_integrands(spec: &str, d: usize) -> CliResult<Vec<Integrand>> {
    let mut out = Vec::new();
    for tok in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (kind, idx) = match tok.split_once(':') {
            Some((k, i)) => (k, Some(i)),
            None => (tok, None),
        };
        let coord = |i: &str| -> CliResult<usize> {
            match i.trim().parse::<usize>() {
                Ok(k) if k >= 1 && k <= d => Ok(k - 1),
                _ => Err(CliError::config(format!("integrand index {i:?} must be in 1..={d}"))),
            }
        };
        match (kind.to_ascii_lowercase().as_str(), idx) {
            ("mean" | "identity", None) => out.extend((0..d).map(Integrand::Coordinate)),
            ("square", None) => out.extend((0..d).map(Integrand::Square)),
            ("theta" | "identity", Some(i)) => out.push(Integrand::Coordinate(coord(i)?)),
            ("square", Some(i)) => out.push(Integrand::Square(coord(i)?)),
            _ => return Err(CliError::config(format!("unknown integrand {tok:?}"))),
        }
    }
    if out.is_empty() {
        return Err(CliError::config("no integrands given"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub integrand: String,
    /// The requested method.
    pub method: String,
    pub estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatesFile {
    pub n: usize,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub seed: u64,
    pub results: Vec<ResultRow>,
}

fn load_samples(a: &PostprocessArgs) -> CliResult<(SampleSet, Option<f64>)> {
    if a.archive.is_dir() {
        let ps = load_run(&a.archive)?;
        Ok((ps.sample_set_at(a.temperature)?, Some(a.temperature)))
    } else {
        Ok((read_archive(&a.archive)?, None))
    }
}

pub fn run(a: &PostprocessArgs) -> CliResult<()> {
    let methods = parse_methods(&a.methods)?;
    let (s, temperature) = load_samples(a)?;
    let integrands = parse_integrands(&a.integrands, s.dim())?;
    let settings = MethodSettings::default();
    let mut results = Vec::new();
    let mut timing = serde_json::Map::new();
    for (mi, m) in methods.iter().enumerate() {
        let t0 = Instant::now();
        for (ii, f) in integrands.iter().enumerate() {
            let phi = f.values(&s)?;
            let seed = rng::stream(a.seed, &[ii as u64, mi as u64]).next_u64();
            let e = estimate_expectation(&s, &phi, m, &settings, seed)?;
            results.push(ResultRow { integrand: f.label(), method: m.label(), estimate: e.estimate, detail: Some(e) });
        }
        let secs = seconds(t0.elapsed());
        let prev = timing.get(&m.label()).and_then(|v| v.as_f64()).unwrap_or(0.0);
        timing.insert(m.label(), (prev + secs).into());
    }
    let file = EstimatesFile { n: s.count(), dim: s.dim(), temperature, seed: a.seed, results };
    emit_json(&file, a.out.as_deref())?;
    if let Some(out) = &a.out {
        emit_json(&serde_json::json!({ "archive": a.archive.display().to_string(), "method_seconds": timing }), Some(&timing_path(out)))?;
    }
    Ok(())
}
