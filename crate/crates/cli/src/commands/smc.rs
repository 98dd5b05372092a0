use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use zvcv::models::{build_model, ModelManifest, TargetModel};
use zvcv::rng;
use zvcv::smc::{replay_smc, run_smc, write_system, JumpStat, ReplaySchedule, SmcConfig};

use crate::output::{emit_json, seconds};
use crate::{CliError, CliResult, SmcArgs};

/// Everything that determines a run. The output directory is left out so
/// that runs written to different places compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model_path: String,
    pub model: ModelManifest,
    pub smc: SmcConfig,
    pub replicates: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.smc.validate()?;
        Ok(())
    }
}

/// Seed of replicate `r` (1-based).
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    rng::stream(base, &[0x7265_706c, r as u64]).next_u64()
}

pub fn replicate_dir(r: usize) -> String {
    format!("replicate_{r:03}")
}

fn parse_jump_stat(s: &str) -> CliResult<JumpStat> {
    match s.to_ascii_lowercase().as_str() {
        "mean" => Ok(JumpStat::Mean),
        "median" => Ok(JumpStat::Median),
        _ => Err(CliError::config(format!("--jump-stat must be mean or median, got {s:?}"))),
    }
}

fn load_manifest(path: &Path) -> CliResult<(ModelManifest, Box<dyn TargetModel>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let m: ModelManifest =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let model = build_model(&m, base)?;
    Ok((m, model))
}

pub fn run(a: &SmcArgs) -> CliResult<()> {
    let (manifest, model) = load_manifest(&a.model)?;
    let cfg = RunConfig {
        model_path: a.model.display().to_string(),
        model: manifest,
        smc: SmcConfig {
            n: a.n,
            rho: a.rho,
            rho_tilde: a.rho_tilde,
            h_min: a.hmin,
            h_max: a.hmax,
            jump_fraction: a.jump_fraction,
            jump_threshold_stat: parse_jump_stat(&a.jump_stat)?,
            max_repeats: a.max_repeats,
            seed: a.seed,
            ..SmcConfig::default()
        },
        replicates: a.replicates,
        seed: a.seed,
    };
    cfg.validate()?;
    fs::create_dir_all(&a.out)?;
    emit_json(&cfg, Some(&a.out.join("run_config.json")))?;
    let model_json = serde_json::to_value(&cfg.model)?;

    let start = Instant::now();
    let pilot = run_smc(model.as_ref(), &cfg.smc)?;
    let pilot_secs = seconds(start.elapsed());
    write_system(&pilot, a.out.join("pilot"), Some(model_json.clone()))?;
    let schedule = pilot.replay_schedule();
    emit_json(&schedule, Some(&a.out.join("schedule.json")))?;
    info!("pilot: {} temperatures, log Z = {}", schedule.temperatures.len(), pilot.log_evidence());

    let times = run_replicates(model.as_ref(), &cfg, &schedule, &a.out, a.jobs, &model_json)?;
    let timing = json!({
        "pilot_seconds": pilot_secs,
        "replicate_seconds": times,
        "total_seconds": seconds(start.elapsed()),
    });
    emit_json(&timing, Some(&a.out.join("timing.json")))?;
    Ok(())
}

fn run_replicates(
    model: &dyn TargetModel,
    cfg: &RunConfig,
    schedule: &ReplaySchedule,
    out: &Path,
    jobs: Option<usize>,
    model_json: &serde_json::Value,
) -> CliResult<Vec<f64>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::config(e.to_string()))?;
    pool.install(|| {
        (1..=cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let t0 = Instant::now();
                let c = SmcConfig { seed: replicate_seed(cfg.seed, r), ..cfg.smc.clone() };
                let ps = replay_smc(model, &c, schedule)?;
                write_system(&ps, out.join(replicate_dir(r)), Some(model_json.clone()))?;
                Ok(seconds(t0.elapsed()))
            })
            .collect()
    })
}
