use serde::{Deserialize, Serialize};

use super::weights::{next_temperature, Criterion};
use super::ParticleSystem;
use crate::error::{Error, Result};
use crate::samples::SampleSet;

/// Temperatures `t̃_0 = 0 < … < 1`, each served by the latest snapshot at
/// or below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub temperatures: Vec<f64>,
    pub population_index: Vec<usize>,
}

impl TemperatureSchedule {
    /// The run's own temperatures.
    pub fn from_system(ps: &ParticleSystem) -> Self {
        TemperatureSchedule {
            temperatures: ps.temperatures(),
            population_index: (0..ps.snapshots.len()).collect(),
        }
    }

    /// Schedule over arbitrary temperatures, assigning populations.
    pub fn with_temperatures(ps: &ParticleSystem, temperatures: Vec<f64>) -> Result<Self> {
        let population_index = temperatures.iter().map(|&t| ps.population_index(t)).collect::<Result<_>>()?;
        let s = TemperatureSchedule { temperatures, population_index };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.temperatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperatures.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.temperatures;
        if t.first() != Some(&0.0) {
            return Err(Error::InvalidSchedule("schedule must start at t = 0".into()));
        }
        if t.last() != Some(&1.0) {
            return Err(Error::InvalidSchedule("schedule must end at t = 1".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSchedule("temperatures must increase strictly".into()));
        }
        if self.population_index.len() != t.len() {
            return Err(Error::InvalidSchedule("need one population per temperature".into()));
        }
        if self.population_index.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidSchedule("population indices must not decrease".into()));
        }
        Ok(())
    }

    /// One weighted sample set per temperature.
    pub fn sample_sets(&self, ps: &ParticleSystem) -> Result<Vec<SampleSet>> {
        self.validate()?;
        self.temperatures
            .iter()
            .zip(&self.population_index)
            .map(|(&t, &k)| {
                let snap = ps
                    .snapshots
                    .get(k)
                    .ok_or_else(|| Error::InvalidSchedule(format!("population {k} does not exist")))?;
                snap.reweighted_to(t)
            })
            .collect()
    }
}

/// Re-places temperatures so that each step holds the CESS at
/// `rho_tilde·N`, reusing the run's populations without further moves.
pub fn posthoc_schedule(ps: &ParticleSystem, rho_tilde: f64) -> Result<TemperatureSchedule> {
    if !(rho_tilde > 0.0 && rho_tilde < 1.0) {
        return Err(Error::invalid(format!("rho_tilde must lie in (0, 1), got {rho_tilde}")));
    }
    let mut temps = vec![0.0];
    let mut pops = vec![ps.population_index(0.0)?];
    let mut t = 0.0;
    while t < 1.0 {
        let k = ps.population_index(t)?;
        let snap = &ps.snapshots[k];
        let current = snap.reweighted_to(t)?;
        let target = rho_tilde * current.count() as f64;
        t = next_temperature(current.weights(), snap.log_like(), t, Criterion::Cess(target))?;
        temps.push(t);
        pops.push(ps.population_index(t)?);
    }
    Ok(TemperatureSchedule { temperatures: temps, population_index: pops })
}
