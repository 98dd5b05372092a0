use std::time::Instant;

use serde::{Deserialize, Serialize};
use zvcv::evidence::{evidence_estimate, parse_methods, EvidenceConfig, EvidenceEstimator, EvidenceReport, VMeanMode};
use zvcv::smc::{posthoc_schedule, TemperatureSchedule};

use super::load_run;
use super::postprocess::ResultRow;
use crate::output::{emit_json, seconds, timing_path};
use crate::{CliError, CliResult, EvidenceArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceFile {
    pub estimator: EvidenceEstimator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posthoc_rho: Option<f64>,
    pub schedule: TemperatureSchedule,
    pub reports: Vec<EvidenceReport>,
    /// One `log_evidence` row per method, in the format `efficiency` reads.
    pub results: Vec<ResultRow>,
}

pub fn run(a: &EvidenceArgs) -> CliResult<()> {
    let estimator: EvidenceEstimator = a.estimator.parse()?;
    let methods = parse_methods(&a.methods)?;
    let v_mean_mode = match a.v_mean.to_ascii_lowercase().as_str() {
        "cv" => VMeanMode::Cv,
        "raw" => VMeanMode::Raw,
        other => return Err(CliError::config(format!("--v-mean must be cv or raw, got {other:?}"))),
    };
    let ps = load_run(&a.archive)?;
    let schedule = match a.posthoc_rho {
        Some(r) => posthoc_schedule(&ps, r)?,
        None => TemperatureSchedule::from_system(&ps),
    };
    let mut reports = Vec::new();
    let mut results = Vec::new();
    let mut timing = serde_json::Map::new();
    for m in methods {
        let t0 = Instant::now();
        let cfg = EvidenceConfig { method: m.clone(), v_mean_mode, seed: a.seed, ..EvidenceConfig::default() };
        let r = evidence_estimate(&ps, &schedule, estimator, &cfg)?;
        timing.insert(m.label(), seconds(t0.elapsed()).into());
        results.push(ResultRow { integrand: format!("log_evidence_{estimator}"), method: m.label(), estimate: r.log_evidence, detail: None });
        reports.push(r);
    }
    let file = EvidenceFile { estimator, posthoc_rho: a.posthoc_rho, schedule, reports, results };
    emit_json(&file, a.out.as_deref())?;
    if let Some(out) = &a.out {
        emit_json(&serde_json::json!({ "archive": a.archive.display().to_string(), "method_seconds": timing }), Some(&timing_path(out)))?;
    }
    Ok(())
}
