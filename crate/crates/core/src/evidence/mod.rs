//! Evidence estimators with control variates on every expectation.
//!
//! Two estimators share the SMC populations: thermodynamic integration
//! over `E_{p_t}[log ℓ]` (trapezoid, optionally with the variance-based
//! second-order correction) and the telescoping product of
//! `E_{p_{t_{j−1}}}[ℓ^{Δt_j}]`.

mod method;

pub use method::{estimate_expectation, parse_methods, stabilised_cv_expectation, Estimate, Method, MethodSettings};

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::samples::{IntegrandValues, SampleSet};
use crate::smc::{ParticleSystem, TemperatureSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceEstimator {
    Cti1,
    Cti2,
    Smc,
}

impl FromStr for EvidenceEstimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cti1" => Ok(Self::Cti1),
            "cti2" => Ok(Self::Cti2),
            "smc" => Ok(Self::Smc),
            _ => Err(Error::invalid(format!("unknown estimator {s:?}; expected cti1, cti2 or smc"))),
        }
    }
}

impl fmt::Display for EvidenceEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cti1 => "cti1",
            Self::Cti2 => "cti2",
            Self::Smc => "smc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationKind {
    ELogLike,
    VLogLike,
    /// `ℓ^{Δt}`; values are reported on the log scale.
    Ratio,
}

/// Which mean goes inside the squared deviation for `V_{p_t}[log ℓ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VMeanMode {
    #[default]
    Cv,
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceConfig {
    pub method: Method,
    pub settings: MethodSettings,
    pub v_mean_mode: VMeanMode,
    pub seed: u64,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        EvidenceConfig { method: Method::Vanilla, settings: MethodSettings::default(), v_mean_mode: VMeanMode::Cv, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationRecord {
    pub temperature: f64,
    pub kind: ExpectationKind,
    #[serde(flatten)]
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub estimator: EvidenceEstimator,
    pub method: String,
    pub log_evidence: f64,
    pub temperatures: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population_index: Option<Vec<usize>>,
    pub per_expectation: Vec<ExpectationRecord>,
    pub fallbacks_triggered: usize,
}

fn check_schedule(temps: &[f64], n_sets: usize) -> Result<()> {
    if temps.len() != n_sets {
        return Err(Error::InvalidSchedule(format!("{} temperatures for {n_sets} sample sets", temps.len())));
    }
    if temps.first() != Some(&0.0) {
        return Err(Error::InvalidSchedule("schedule is missing t = 0".into()));
    }
    if temps.last() != Some(&1.0) {
        return Err(Error::InvalidSchedule("schedule is missing t = 1".into()));
    }
    if temps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidSchedule("temperatures must increase strictly".into()));
    }
    Ok(())
}

fn task_seed(seed: u64, j: usize, kind: ExpectationKind) -> u64 {
    rng::stream(seed, &[j as u64, kind as u64]).next_u64()
}

fn log_like_of(s: &SampleSet) -> Result<&[f64]> {
    s.log_like().ok_or_else(|| Error::invalid("sample set carries no log-likelihood values"))
}

/// `Σ Δt_j (E_{j−1} + E_j) / 2`.
pub fn trapezoid(temps: &[f64], e: &[f64]) -> f64 {
    temps.windows(2).zip(e.windows(2)).map(|(t, e)| (t[1] - t[0]) * 0.5 * (e[0] + e[1])).sum()
}

/// `−Σ Δt_j² (V_j − V_{j−1}) / 12`.
pub fn second_order_correction(temps: &[f64], v: &[f64]) -> f64 {
    -temps.windows(2).zip(v.windows(2)).map(|(t, v)| (t[1] - t[0]).powi(2) * (v[1] - v[0]) / 12.0).sum::<f64>()
}

/// Thermodynamic-integration quadrature; `v` is used only for order 2.
pub fn cti_quadrature(temps: &[f64], e: &[f64], v: Option<&[f64]>) -> f64 {
    trapezoid(temps, e) + v.map_or(0.0, |v| second_order_correction(temps, v))
}

/// CTI estimate from one sample set per temperature.
pub fn cti_from_sets(temps: &[f64], sets: &[SampleSet], second_order: bool, cfg: &EvidenceConfig) -> Result<EvidenceReport> {
    check_schedule(temps, sets.len())?;
    let e: Vec<Estimate> = sets
        .par_iter()
        .enumerate()
        .map(|(j, s)| {
            let phi = IntegrandValues::new("log_like", log_like_of(s)?.to_vec())?;
            estimate_expectation(s, &phi, &cfg.method, &cfg.settings, task_seed(cfg.seed, j, ExpectationKind::ELogLike))
        })
        .collect::<Result<_>>()?;
    let mut records: Vec<ExpectationRecord> = temps
        .iter()
        .zip(&e)
        .map(|(&t, est)| ExpectationRecord { temperature: t, kind: ExpectationKind::ELogLike, estimate: est.clone() })
        .collect();
    let means: Vec<f64> = e.iter().map(|x| x.estimate).collect();
    let log_evidence = if second_order {
        let v: Vec<Estimate> = sets
            .par_iter()
            .enumerate()
            .map(|(j, s)| {
                let centre = match cfg.v_mean_mode {
                    VMeanMode::Cv => e[j].estimate,
                    VMeanMode::Raw => e[j].raw,
                };
                let dev = log_like_of(s)?.iter().map(|l| (l - centre).powi(2)).collect();
                let phi = IntegrandValues::new("sq_dev_log_like", dev)?;
                estimate_expectation(s, &phi, &cfg.method, &cfg.settings, task_seed(cfg.seed, j, ExpectationKind::VLogLike))
            })
            .collect::<Result<_>>()?;
        let vars: Vec<f64> = v.iter().map(|x| x.estimate).collect();
        records.extend(
            temps
                .iter()
                .zip(v)
                .map(|(&t, est)| ExpectationRecord { temperature: t, kind: ExpectationKind::VLogLike, estimate: est }),
        );
        cti_quadrature(temps, &means, Some(&vars))
    } else {
        cti_quadrature(temps, &means, None)
    };
    Ok(EvidenceReport {
        estimator: if second_order { EvidenceEstimator::Cti2 } else { EvidenceEstimator::Cti1 },
        method: cfg.method.label(),
        log_evidence,
        temperatures: temps.to_vec(),
        population_index: None,
        fallbacks_triggered: records.iter().filter(|r| r.estimate.fallback).count(),
        per_expectation: records,
    })
}

/// Telescoping-product estimate from one sample set per temperature; factor
/// `j` uses the set at `t_{j−1}`.
pub fn smc_from_sets(temps: &[f64], sets: &[SampleSet], cfg: &EvidenceConfig) -> Result<EvidenceReport> {
    check_schedule(temps, sets.len())?;
    let records: Vec<ExpectationRecord> = (1..temps.len())
        .into_par_iter()
        .map(|j| {
            let s = &sets[j - 1];
            let dt = temps[j] - temps[j - 1];
            let lp: Vec<f64> = log_like_of(s)?.iter().map(|l| dt * l).collect();
            // Dividing by the maximum keeps the integrand in (0, 1].
            let m = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let phi = IntegrandValues::new("lik_ratio", lp.iter().map(|v| (v - m).exp()).collect())?;
            let mut est = method::stabilised_scaled(
                s,
                &phi,
                &cfg.method,
                &cfg.settings,
                task_seed(cfg.seed, j, ExpectationKind::Ratio),
                true,
            )?;
            est.estimate = m + est.estimate.ln();
            est.raw = m + est.raw.ln();
            Ok(ExpectationRecord { temperature: temps[j - 1], kind: ExpectationKind::Ratio, estimate: est })
        })
        .collect::<Result<_>>()?;
    let log_evidence = records.iter().map(|r| r.estimate.estimate).sum();
    Ok(EvidenceReport {
        estimator: EvidenceEstimator::Smc,
        method: cfg.method.label(),
        log_evidence,
        temperatures: temps.to_vec(),
        population_index: None,
        fallbacks_triggered: records.iter().filter(|r| r.estimate.fallback).count(),
        per_expectation: records,
    })
}

/// CTI on the populations of `ps` assigned by `schedule`.
pub fn cti_estimate(ps: &ParticleSystem, schedule: &TemperatureSchedule, second_order: bool, cfg: &EvidenceConfig) -> Result<EvidenceReport> {
    let sets = schedule.sample_sets(ps)?;
    let mut r = cti_from_sets(&schedule.temperatures, &sets, second_order, cfg)?;
    r.population_index = Some(schedule.population_index.clone());
    Ok(r)
}

/// Telescoping product on the populations of `ps` assigned by `schedule`.
pub fn smc_evidence_estimate(ps: &ParticleSystem, schedule: &TemperatureSchedule, cfg: &EvidenceConfig) -> Result<EvidenceReport> {
    let sets = schedule.sample_sets(ps)?;
    let mut r = smc_from_sets(&schedule.temperatures, &sets, cfg)?;
    r.population_index = Some(schedule.population_index.clone());
    Ok(r)
}

/// Dispatches on `estimator`.
pub fn evidence_estimate(
    ps: &ParticleSystem,
    schedule: &TemperatureSchedule,
    estimator: EvidenceEstimator,
    cfg: &EvidenceConfig,
) -> Result<EvidenceReport> {
    match estimator {
        EvidenceEstimator::Cti1 => cti_estimate(ps, schedule, false, cfg),
        EvidenceEstimator::Cti2 => cti_estimate(ps, schedule, true, cfg),
        EvidenceEstimator::Smc => smc_evidence_estimate(ps, schedule, cfg),
    }
}
