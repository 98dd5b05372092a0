//! Likelihood-annealing SMC with preconditioned MALA moves.
//!
//! The sampler moves `N` particles from the prior (`t = 0`) to the
//! posterior (`t = 1`) through tempered targets `p_t ∝ ℓ^t p_0`. Each step
//! picks the next temperature so the ESS stays at `ρN`, reweights,
//! resamples and runs MALA sweeps whose step size and repeat count are
//! tuned on the fly. A finished run can be frozen into a [`ReplaySchedule`]
//! and replayed with new seeds so that replicate runs share temperatures
//! and kernel parameters.

mod archive;
mod mala;
mod schedule;
mod weights;

pub use archive::{read_system, write_system, ArchiveManifest};
pub use mala::{
    choose_num_repeats, mala_move, mala_step, mala_sweep, pairwise_mahalanobis, step_grid, tune_step_size,
    JumpStat, MoveStats, Particle, Preconditioner, StepOutcome,
};
pub use schedule::{posthoc_schedule, TemperatureSchedule};
pub use weights::{ess, cess, next_temperature, resample_multinomial, reweight, Criterion, Reweighted, MIN_STEP};

use log::{error, info};
use nalgebra::DMatrix;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::TargetModel;
use crate::samples::{uniform_weights, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    #[default]
    Multinomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmcConfig {
    pub n: usize,
    /// ESS fraction kept at every adaptive step.
    pub rho: f64,
    /// CESS fraction for the post-hoc schedule.
    pub rho_tilde: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub n_h: usize,
    /// Fraction of particles whose total jump must exceed the threshold.
    pub jump_fraction: f64,
    pub jump_threshold_stat: JumpStat,
    pub max_repeats: usize,
    pub resampling: Resampling,
    pub seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            n: 1000,
            rho: 0.5,
            rho_tilde: 0.9,
            h_min: 0.01,
            h_max: 1.0,
            n_h: 20,
            jump_fraction: 0.5,
            jump_threshold_stat: JumpStat::Mean,
            max_repeats: 100,
            resampling: Resampling::Multinomial,
            seed: 0,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("need at least two particles"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.rho_tilde > 0.0 && self.rho_tilde < 1.0) {
            return Err(Error::invalid(format!("rho_tilde must lie in (0, 1), got {}", self.rho_tilde)));
        }
        if !(self.h_min > 0.0 && self.h_min < self.h_max && self.h_max.is_finite()) {
            return Err(Error::invalid("step sizes must satisfy 0 < h_min < h_max"));
        }
        if self.n_h == 0 || self.max_repeats == 0 {
            return Err(Error::invalid("step grid and repeat cap must be positive"));
        }
        if !(0.0..=1.0).contains(&self.jump_fraction) {
            return Err(Error::invalid("jump fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Temperatures and kernel parameters of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySchedule {
    /// `t_0 = 0 < … < t_T = 1`.
    pub temperatures: Vec<f64>,
    /// Step size used at `t_j`, `j ≥ 1`.
    pub h: Vec<f64>,
    /// MALA sweeps at `t_j`, `j ≥ 1`.
    pub repeats: Vec<usize>,
}

impl ReplaySchedule {
    pub fn validate(&self) -> Result<()> {
        let t = &self.temperatures;
        if t.len() < 2 || t[0] != 0.0 || *t.last().unwrap() != 1.0 {
            return Err(Error::InvalidSchedule("temperatures must run from 0 to 1".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSchedule("temperatures must increase strictly".into()));
        }
        if self.h.len() != t.len() - 1 || self.repeats.len() != t.len() - 1 {
            return Err(Error::InvalidSchedule("need one step size and repeat count per move".into()));
        }
        if self.h.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidSchedule("step sizes must be positive".into()));
        }
        Ok(())
    }
}

/// The particle population at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    /// Draws with `∇log p_t`, weights and cached log-densities.
    pub samples: SampleSet,
    pub grad_log_like: DMatrix<f64>,
    /// `log Σ W ℓ^{t − t_prev}` from the previous snapshot; 0 at `t = 0`.
    pub log_increment: f64,
}

impl Snapshot {
    fn from_particles(t: f64, ps: &[Particle], weights: Vec<f64>, log_increment: f64) -> Result<Self> {
        let (n, d) = (ps.len(), ps[0].theta.len());
        let theta = DMatrix::from_fn(n, d, |i, k| ps[i].theta[k]);
        let gl = DMatrix::from_fn(n, d, |i, k| ps[i].grad_log_like[k]);
        let grad = DMatrix::from_fn(n, d, |i, k| ps[i].grad_log_prior[k] + t * ps[i].grad_log_like[k]);
        let samples = SampleSet::new(theta, grad, weights)?.with_log_densities(
            ps.iter().map(|p| p.log_like).collect(),
            ps.iter().map(|p| p.log_prior).collect(),
        )?;
        Ok(Snapshot { t, samples, grad_log_like: gl, log_increment })
    }

    pub fn log_like(&self) -> &[f64] {
        self.samples.log_like().expect("snapshots carry log-densities")
    }

    pub fn log_prior(&self) -> &[f64] {
        self.samples.log_prior().expect("snapshots carry log-densities")
    }

    /// `∇log p_0 = ∇log p_t − t ∇log ℓ`.
    pub fn grad_log_prior(&self) -> DMatrix<f64> {
        self.samples.grad_log_target() - &self.grad_log_like * self.t
    }

    pub fn particles(&self) -> Vec<Particle> {
        let glp = self.grad_log_prior();
        let (ll, lp) = (self.log_like(), self.log_prior());
        (0..self.samples.count())
            .map(|i| Particle {
                theta: self.samples.theta_row(i),
                log_like: ll[i],
                log_prior: lp[i],
                grad_log_like: self.grad_log_like.row(i).iter().copied().collect(),
                grad_log_prior: glp.row(i).iter().copied().collect(),
            })
            .collect()
    }

    /// The population reweighted to `p_t` for `t ≥ self.t`, with gradients
    /// of `log p_t`.
    pub fn reweighted_to(&self, t: f64) -> Result<SampleSet> {
        if t < self.t {
            return Err(Error::InvalidSchedule(format!("cannot reweight from {} back to {t}", self.t)));
        }
        let w = reweight(self.samples.weights(), self.log_like(), t - self.t)?.weights;
        let grad = self.samples.grad_log_target() + &self.grad_log_like * (t - self.t);
        SampleSet::new(self.samples.theta().clone(), grad, w)?
            .with_log_densities(self.log_like().to_vec(), self.log_prior().to_vec())
    }
}

/// Per-step diagnostics of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub log_increment: f64,
    pub ess: f64,
    pub h: f64,
    pub repeats: usize,
    pub acceptance_rate: f64,
    pub jump_threshold: Option<f64>,
}

/// Output of [`run_smc`]: one snapshot per temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    pub snapshots: Vec<Snapshot>,
    pub steps: Vec<StepRecord>,
    pub seed: u64,
}

impl ParticleSystem {
    pub fn temperatures(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    /// Standard SMC estimate of `log Z`.
    pub fn log_evidence(&self) -> f64 {
        self.snapshots.iter().map(|s| s.log_increment).sum()
    }

    pub fn replay_schedule(&self) -> ReplaySchedule {
        ReplaySchedule {
            temperatures: self.temperatures(),
            h: self.steps.iter().map(|s| s.h).collect(),
            repeats: self.steps.iter().map(|s| s.repeats).collect(),
        }
    }

    /// Index of the latest snapshot with `t_k ≤ t`.
    pub fn population_index(&self, t: f64) -> Result<usize> {
        self.snapshots
            .iter()
            .rposition(|s| s.t <= t)
            .ok_or_else(|| Error::InvalidSchedule(format!("no snapshot at or below t = {t}")))
    }

    /// Weighted sample set for `p_t` built from the latest snapshot at or
    /// below `t`.
    pub fn sample_set_at(&self, t: f64) -> Result<SampleSet> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidSchedule(format!("temperature {t} outside [0, 1]")));
        }
        self.snapshots[self.population_index(t)?].reweighted_to(t)
    }

    pub fn posterior(&self) -> &Snapshot {
        self.snapshots.last().expect("a run has at least one snapshot")
    }
}

enum Mode<'a> {
    Adaptive,
    Replay(&'a ReplaySchedule),
}

/// Adaptive run.
pub fn run_smc(model: &dyn TargetModel, cfg: &SmcConfig) -> Result<ParticleSystem> {
    cfg.validate()?;
    drive(model, cfg, Mode::Adaptive)
}

/// Non-adaptive run through a frozen schedule. Only `n`, `seed` and the
/// resampling scheme are read from `cfg`.
pub fn replay_smc(model: &dyn TargetModel, cfg: &SmcConfig, schedule: &ReplaySchedule) -> Result<ParticleSystem> {
    schedule.validate()?;
    if cfg.n < 2 {
        return Err(Error::invalid("need at least two particles"));
    }
    drive(model, cfg, Mode::Replay(schedule))
}

const TAG_INIT: u64 = 0;
const TAG_PAIRS: u64 = 1;
const TAG_RESAMPLE: u64 = 2;
const TAG_TUNE: u64 = 3;
const TAG_MOVE: u64 = 4;

fn initial_particles(model: &dyn TargetModel, n: usize, seed: u64) -> Result<Vec<Particle>> {
    let draws = model.sample_prior(n, crate::rng::stream(seed, &[TAG_INIT]).next_u64());
    let d = model.dim();
    if draws.shape() != (n, d) {
        return Err(Error::invalid(format!("prior sampler returned {:?}, expected ({n}, {d})", draws.shape())));
    }
    (0..n)
        .map(|i| {
            let theta: Vec<f64> = draws.row(i).iter().copied().collect();
            Particle::evaluate(model, theta)
                .ok_or_else(|| Error::invalid(format!("prior draw {i} has a non-finite log-density or gradient")))
        })
        .collect()
}

fn drive(model: &dyn TargetModel, cfg: &SmcConfig, mode: Mode) -> Result<ParticleSystem> {
    let n = cfg.n;
    let seed = cfg.seed;
    let mut particles = initial_particles(model, n, seed)?;
    let mut snapshots = vec![Snapshot::from_particles(0.0, &particles, uniform_weights(n), 0.0)?];
    let mut steps = Vec::new();
    let mut t = 0.0;
    let grid = step_grid(cfg.h_min, cfg.h_max, cfg.n_h);
    let mut j = 0usize;
    while t < 1.0 {
        j += 1;
        let step = j as u64;
        let w = uniform_weights(n);
        let ll: Vec<f64> = particles.iter().map(|p| p.log_like).collect();
        let t_next = match mode {
            Mode::Adaptive => next_temperature(&w, &ll, t, Criterion::Ess(cfg.rho * n as f64))?,
            Mode::Replay(s) => s.temperatures[j],
        };
        let rw = match reweight(&w, &ll, t_next - t) {
            Ok(r) => r,
            Err(e) => {
                let lo = ll.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                error!("reweighting failed from t = {t} to {t_next}; log-likelihood range [{lo}, {hi}]");
                return Err(e);
            }
        };
        let thetas: Vec<&[f64]> = particles.iter().map(|p| p.theta.as_slice()).collect();
        let pc = Preconditioner::from_particles(&thetas, &rw.weights)?;
        let threshold = match mode {
            Mode::Adaptive => Some(pairwise_mahalanobis(
                &thetas,
                &rw.weights,
                &pc,
                cfg.jump_threshold_stat,
                seed,
                &[step, TAG_PAIRS],
            )),
            Mode::Replay(_) => None,
        };
        let ess_val = ess(&rw.weights);
        let idx = match cfg.resampling {
            Resampling::Multinomial => resample_multinomial(&rw.weights, seed, &[step, TAG_RESAMPLE]),
        };
        particles = idx.iter().map(|&i| particles[i].clone()).collect();

        let (h, repeats, acc) = match mode {
            Mode::Adaptive => {
                let (h, _) = tune_step_size(model, &particles, t_next, &grid, &pc, seed, &[step, TAG_TUNE]);
                let mut acc = 0usize;
                let r = choose_num_repeats(
                    |r| {
                        let (a, jumps) = mala_sweep(model, &mut particles, t_next, h, &pc, seed, &[step, TAG_MOVE, r as u64]);
                        acc += a;
                        jumps
                    },
                    threshold.unwrap(),
                    cfg.jump_fraction,
                    cfg.max_repeats,
                );
                (h, r, acc)
            }
            Mode::Replay(s) => {
                let (h, r) = (s.h[j - 1], s.repeats[j - 1]);
                let mut acc = 0usize;
                for rep in 0..r {
                    acc += mala_sweep(model, &mut particles, t_next, h, &pc, seed, &[step, TAG_MOVE, rep as u64]).0;
                }
                (h, r, acc)
            }
        };
        let acceptance_rate = if repeats == 0 { 0.0 } else { acc as f64 / (repeats * n) as f64 };
        info!("t = {t_next:.6}: h = {h:.4}, {repeats} sweeps, acceptance {acceptance_rate:.3}");
        snapshots.push(Snapshot::from_particles(t_next, &particles, uniform_weights(n), rw.log_increment)?);
        steps.push(StepRecord {
            t: t_next,
            log_increment: rw.log_increment,
            ess: ess_val,
            h,
            repeats,
            acceptance_rate,
            jump_threshold: threshold,
        });
        t = t_next;
    }
    Ok(ParticleSystem { snapshots, steps, seed })
}
