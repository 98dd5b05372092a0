//! Snapshot archive: `samples_NNN.csv` and `grad_log_like_NNN.csv` per
//! temperature plus `manifest.json`.

use std::fs::{self, File};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ParticleSystem, Snapshot, StepRecord};
use crate::error::{Error, Result};
use crate::samples::{fmt_f64, read_archive, write_archive};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub seed: u64,
    pub n: usize,
    pub dim: usize,
    pub temperatures: Vec<f64>,
    pub log_increments: Vec<f64>,
    pub log_evidence: f64,
    pub h: Vec<f64>,
    pub repeats: Vec<usize>,
    pub steps: Vec<StepRecord>,
    pub files: Vec<String>,
    pub grad_log_like_files: Vec<String>,
    /// The model description the run was made with, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<serde_json::Value>,
}

impl ArchiveManifest {
    pub fn replay_schedule(&self) -> super::ReplaySchedule {
        super::ReplaySchedule { temperatures: self.temperatures.clone(), h: self.h.clone(), repeats: self.repeats.clone() }
    }
}

fn write_matrix(m: &DMatrix<f64>, prefix: &str, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record((1..=m.ncols()).map(|k| format!("{prefix}_{k}")))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

fn read_matrix(path: &Path, d: usize) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().flexible(false).from_reader(File::open(path)?);
    if r.headers()?.len() != d {
        return Err(Error::invalid(format!("{} does not have {d} columns", path.display())));
    }
    let mut vals = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for v in rec.iter() {
            vals.push(v.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad number {v:?}")))?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, d, &vals))
}

/// Writes the run into `dir`, creating it if needed.
pub fn write_system(ps: &ParticleSystem, dir: impl AsRef<Path>, model: Option<serde_json::Value>) -> Result<ArchiveManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut gfiles = Vec::new();
    for (j, s) in ps.snapshots.iter().enumerate() {
        let f = format!("samples_{j:03}.csv");
        let g = format!("grad_log_like_{j:03}.csv");
        write_archive(&s.samples, dir.join(&f))?;
        write_matrix(&s.grad_log_like, "grad_log_like", &dir.join(&g))?;
        files.push(f);
        gfiles.push(g);
    }
    let first = &ps.snapshots[0].samples;
    let m = ArchiveManifest {
        seed: ps.seed,
        n: first.count(),
        dim: first.dim(),
        temperatures: ps.temperatures(),
        log_increments: ps.snapshots.iter().map(|s| s.log_increment).collect(),
        log_evidence: ps.log_evidence(),
        h: ps.steps.iter().map(|s| s.h).collect(),
        repeats: ps.steps.iter().map(|s| s.repeats).collect(),
        steps: ps.steps.clone(),
        files,
        grad_log_like_files: gfiles,
        model,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(m)
}

/// Reads a run written by [`write_system`].
pub fn read_system(dir: impl AsRef<Path>) -> Result<(ParticleSystem, ArchiveManifest)> {
    let dir = dir.as_ref();
    let m: ArchiveManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let t = &m.temperatures;
    if m.files.len() != t.len() || m.grad_log_like_files.len() != t.len() || m.log_increments.len() != t.len() {
        return Err(Error::InvalidSchedule("manifest lists differ in length".into()));
    }
    if t.first() != Some(&0.0) || t.last() != Some(&1.0) {
        return Err(Error::InvalidSchedule("archive must contain snapshots at t = 0 and t = 1".into()));
    }
    let mut snapshots = Vec::with_capacity(t.len());
    for j in 0..t.len() {
        let samples = read_archive(dir.join(&m.files[j]))?;
        if samples.log_like().is_none() {
            return Err(Error::invalid(format!("{} lacks log-density columns", m.files[j])));
        }
        let g = read_matrix(&dir.join(&m.grad_log_like_files[j]), samples.dim())?;
        if g.nrows() != samples.count() {
            return Err(Error::invalid(format!("{} has the wrong number of rows", m.grad_log_like_files[j])));
        }
        snapshots.push(Snapshot { t: t[j], samples, grad_log_like: g, log_increment: m.log_increments[j] });
    }
    Ok((ParticleSystem { snapshots, steps: m.steps.clone(), seed: m.seed }, m))
}
