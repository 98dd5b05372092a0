use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TargetModel;
use crate::error::{Error, Result};
use crate::rng;
use crate::samples::{sigmoid, softplus, CoordTransform, ParameterTransform};

/// Release counts and the upper-triangular recapture array: row `i` holds
/// the recaptures in years `i+1 ..= years` of animals released in year `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecaptureData {
    pub released: Vec<u64>,
    pub recaptures: Vec<Vec<u64>>,
}

impl RecaptureData {
    /// Six release years of dipper data.
    pub fn dipper() -> Self {
        serde_json::from_str(include_str!("../../data/dipper.json")).expect("embedded fixture parses")
    }
}

/// Cormack-Jolly-Seber model on the logit scale, with
/// `θ = (φ1..φ5, p2..p6, φ6·p7)` and uniform priors on θ.
#[derive(Debug, Clone)]
pub struct RecaptureModel {
    data: RecaptureData,
    never_seen: Vec<f64>,
    /// For each release year, the cells `(count, factors)` where each factor
    /// is `(θ index, true for θ, false for 1 − θ)`.
    cells: Vec<Vec<(f64, Vec<(usize, bool)>)>>,
}

const NPAR: usize = 11;

fn phi_idx(i: usize) -> usize {
    i - 1
}

fn p_idx(k: usize) -> usize {
    k + 3
}

impl RecaptureModel {
    pub fn new(data: RecaptureData) -> Result<Self> {
        if data.released.len() != 6 || data.recaptures.len() != 6 {
            return Err(Error::invalid("recapture model expects six release years"));
        }
        let mut cells = Vec::with_capacity(6);
        let mut never_seen = Vec::with_capacity(6);
        for i in 1..=6usize {
            let row = &data.recaptures[i - 1];
            if row.len() != 7 - i {
                return Err(Error::invalid(format!("recapture row {i} must have {} entries", 7 - i)));
            }
            let seen: u64 = row.iter().sum();
            if seen > data.released[i - 1] {
                return Err(Error::invalid(format!("row {i} recaptures exceed releases")));
            }
            never_seen.push((data.released[i - 1] - seen) as f64);
            let mut year = Vec::with_capacity(row.len());
            for k in i + 1..=7 {
                let mut f = Vec::new();
                if i == 6 {
                    // Only φ6·p7 is identifiable.
                    f.push((10, true));
                } else {
                    f.push((phi_idx(i), true));
                    for m in i + 1..k {
                        if m <= 5 {
                            f.push((phi_idx(m), true));
                        }
                        f.push((p_idx(m), false));
                    }
                    // φ6 only ever appears together with p7.
                    f.push(if k == 7 { (10, true) } else { (p_idx(k), true) });
                }
                year.push((row[k - i - 1] as f64, f));
            }
            cells.push(year);
        }
        Ok(RecaptureModel { data, never_seen, cells })
    }

    pub fn dipper() -> Self {
        Self::new(RecaptureData::dipper()).expect("fixture is valid")
    }

    pub fn data(&self) -> &RecaptureData {
        &self.data
    }

    /// Probability that an animal released in year `i` (1-based) is never
    /// seen again, at natural parameters `theta`.
    pub fn chi(&self, theta: &[f64], i: usize) -> f64 {
        1.0 - self.cells[i - 1]
            .iter()
            .map(|(_, f)| f.iter().map(|&(j, pos)| if pos { theta[j] } else { 1.0 - theta[j] }).product::<f64>())
            .sum::<f64>()
    }

    /// Returns `(log ℓ, ∂log ℓ/∂ψ)`.
    fn eval(&self, psi: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        // log θ and log(1 − θ) without cancellation.
        let lp: Vec<f64> = psi.iter().map(|&v| -softplus(-v)).collect();
        let lq: Vec<f64> = psi.iter().map(|&v| -softplus(v)).collect();
        let th: Vec<f64> = psi.iter().map(|&v| sigmoid(v)).collect();
        let mut ll = 0.0;
        let mut grad = vec![0.0; NPAR];
        for (year, cells) in self.cells.iter().enumerate() {
            let mut q_sum = 0.0;
            let mut dq_sum = vec![0.0; NPAR];
            for (count, f) in cells {
                let lcell: f64 = f.iter().map(|&(j, pos)| if pos { lp[j] } else { lq[j] }).sum();
                if *count > 0.0 {
                    ll += count * lcell;
                }
                let q = lcell.exp();
                q_sum += q;
                for &(j, pos) in f {
                    let d = if pos { 1.0 - th[j] } else { -th[j] };
                    if *count > 0.0 && want_grad {
                        grad[j] += count * d;
                    }
                    dq_sum[j] += q * d;
                }
            }
            let chi = 1.0 - q_sum;
            let d = self.never_seen[year];
            if d > 0.0 {
                ll += d * chi.ln();
                if want_grad {
                    for j in 0..NPAR {
                        grad[j] -= d * dq_sum[j] / chi;
                    }
                }
            }
        }
        (ll, grad)
    }
}

impl TargetModel for RecaptureModel {
    fn name(&self) -> &str {
        "recapture"
    }

    fn dim(&self) -> usize {
        NPAR
    }

    /// Density of `logit(U)` for `U` uniform: `Σ ψ − 2 log(1 + e^ψ)`.
    fn log_prior(&self, psi: &[f64]) -> f64 {
        psi.iter().map(|&v| v - 2.0 * softplus(v)).sum()
    }

    fn grad_log_prior(&self, psi: &[f64]) -> Vec<f64> {
        psi.iter().map(|&v| 1.0 - 2.0 * sigmoid(v)).collect()
    }

    fn log_like(&self, psi: &[f64]) -> f64 {
        self.eval(psi, false).0
    }

    fn grad_log_like(&self, psi: &[f64]) -> Vec<f64> {
        self.eval(psi, true).1
    }

    fn sample_prior(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, &[0x7072_696f_72]);
        DMatrix::from_fn(n, NPAR, |_, _| {
            let u: f64 = r.random_range(f64::EPSILON..1.0);
            (u / (1.0 - u)).ln()
        })
    }

    fn transform(&self) -> ParameterTransform {
        ParameterTransform::uniform(CoordTransform::Logit, NPAR)
    }

    fn boundary_note(&self) -> &'static str {
        "logistic-density prior on the logit scale has exponential tails"
    }
}
