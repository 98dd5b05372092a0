use log::warn;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::samples::log_sum_exp;

/// Result of moving weights from `t` to `t + Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reweighted {
    pub weights: Vec<f64>,
    /// `log Σ_i W_i ℓ_i^Δt`.
    pub log_increment: f64,
}

/// Reweights `weights` by `ℓ^Δt` in log space.
pub fn reweight(weights: &[f64], log_like: &[f64], dt: f64) -> Result<Reweighted> {
    if !(dt >= 0.0) {
        return Err(Error::invalid(format!("temperature step must be nonnegative, got {dt}")));
    }
    if weights.len() != log_like.len() {
        return Err(Error::invalid("weights and log-likelihoods differ in length"));
    }
    if dt == 0.0 {
        return Ok(Reweighted { weights: weights.to_vec(), log_increment: 0.0 });
    }
    // Shift by the largest exponent and divide by Σ W so that a constant
    // likelihood gives an exact increment.
    let m = weights
        .iter()
        .zip(log_like)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, l)| dt * l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::DegenerateWeights { temperature: dt });
    }
    let a: Vec<f64> = weights
        .iter()
        .zip(log_like)
        .map(|(w, l)| if *w > 0.0 { w * (dt * l - m).exp() } else { 0.0 })
        .collect();
    let s: f64 = a.iter().sum();
    let total: f64 = weights.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::DegenerateWeights { temperature: dt });
    }
    Ok(Reweighted { weights: a.iter().map(|v| v / s).collect(), log_increment: m + (s / total).ln() })
}

/// `1 / Σ W²` for normalised weights.
pub fn ess(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    s * s / s2
}

/// `N (Σ W r)² / Σ W r²`.
pub fn cess(prev_weights: &[f64], ratios: &[f64]) -> f64 {
    let n = prev_weights.len() as f64;
    let a: f64 = prev_weights.iter().zip(ratios).map(|(w, r)| w * r).sum();
    let b: f64 = prev_weights.iter().zip(ratios).map(|(w, r)| w * r * r).sum();
    n * a * a / b
}

/// ESS after reweighting by `ℓ^Δt`, computed stably.
pub(crate) fn ess_after(weights: &[f64], log_like: &[f64], dt: f64) -> f64 {
    let lw: Vec<f64> = weights.iter().zip(log_like).map(|(w, l)| w.ln() + dt * l).collect();
    let a = log_sum_exp(&lw);
    let b = log_sum_exp(&lw.iter().map(|v| 2.0 * v).collect::<Vec<_>>());
    (2.0 * a - b).exp()
}

/// CESS for the step `Δt`, computed stably.
pub(crate) fn cess_after(weights: &[f64], log_like: &[f64], dt: f64) -> f64 {
    let n = weights.len() as f64;
    let lw: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let a = log_sum_exp(&lw.iter().zip(log_like).map(|(w, l)| w + dt * l).collect::<Vec<_>>());
    let b = log_sum_exp(&lw.iter().zip(log_like).map(|(w, l)| w + 2.0 * dt * l).collect::<Vec<_>>());
    n * (2.0 * a - b).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    /// Keep `1/ΣW²` at the target.
    Ess(f64),
    /// Keep the conditional ESS at the target.
    Cess(f64),
}

pub const MIN_STEP: f64 = 1e-8;
const MAX_BISECTIONS: usize = 50;

/// Next inverse temperature from `t_cur` by bisection on the criterion.
pub fn next_temperature(weights: &[f64], log_like: &[f64], t_cur: f64, criterion: Criterion) -> Result<f64> {
    let n = weights.len() as f64;
    let (target, f): (f64, Box<dyn Fn(f64) -> f64>) = match criterion {
        Criterion::Ess(v) => (v, Box::new(|dt| ess_after(weights, log_like, dt))),
        Criterion::Cess(v) => (v, Box::new(|dt| cess_after(weights, log_like, dt))),
    };
    let room = 1.0 - t_cur;
    if room <= 0.0 {
        return Ok(1.0);
    }
    let at_one = f(room);
    if at_one >= target || (at_one - target).abs() <= 1e-12 * n {
        return Ok(1.0);
    }
    // Bisecting to full precision keeps the criterion well inside the
    // 1e-3·N band and costs only a few O(N) passes.
    let (mut lo, mut hi) = (0.0, room);
    let mut crossings = 0;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v.is_nan() {
            hi = mid;
            continue;
        }
        if v >= target {
            lo = mid;
        } else {
            hi = mid;
            crossings += 1;
        }
    }
    if crossings == 0 && lo == 0.0 {
        warn!("temperature bisection found no bracketing step from t = {t_cur}");
    }
    if lo < MIN_STEP {
        return Err(Error::TemperatureStall { from: t_cur, min_step: MIN_STEP });
    }
    Ok(t_cur + lo)
}

/// Multinomial ancestor indices, in increasing order.
pub fn resample_multinomial(weights: &[f64], seed: u64, tags: &[u64]) -> Vec<usize> {
    let n = weights.len();
    if n <= 1 {
        return (0..n).collect();
    }
    let mut r = rng::stream(seed, tags);
    let mut u: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
    u.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut j = 0;
    for &v in &u {
        let target = v * total;
        while j + 1 < n && cum + weights[j] <= target {
            cum += weights[j];
            j += 1;
        }
        // Skip zero-weight particles that precede a positive one.
        while weights[j] == 0.0 && j + 1 < n {
            j += 1;
        }
        out.push(j);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reweight_hand_example() {
        let r = reweight(&[0.5, 0.5], &[0.0, 4f64.ln()], 0.5).unwrap();
        assert!((r.weights[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.weights[1] - 2.0 / 3.0).abs() < 1e-15);
        // Σ W ℓ^Δt = 0.5·1 + 0.5·2.
        assert!((r.log_increment.exp() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn reweight_zero_step_and_constant_likelihood() {
        let w = [0.2, 0.3, 0.5];
        let r = reweight(&w, &[1.0, -3.0, 2.0], 0.0).unwrap();
        assert_eq!(r.weights, w);
        assert_eq!(r.log_increment, 0.0);
        let r = reweight(&w, &[-2.0; 3], 0.25).unwrap();
        for (a, b) in r.weights.iter().zip(&w) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((r.log_increment + 0.5).abs() < 1e-15);
    }

    #[test]
    fn reweight_extreme_log_likelihoods() {
        let ll = [-500.0, 500.0, 0.0, 499.0];
        let r = reweight(&[0.25; 4], &ll, 1.0).unwrap();
        assert!(r.weights.iter().all(|w| w.is_finite()));
        assert!(r.log_increment.is_finite());
        assert!(matches!(
            reweight(&[1.0, 0.0], &[f64::NEG_INFINITY, 0.0], 1.0),
            Err(Error::DegenerateWeights { .. })
        ));
    }

    #[test]
    fn ess_and_cess_hand_cases() {
        assert!((ess(&[0.25; 4]) - 4.0).abs() < 1e-12);
        assert!((cess(&[0.1, 0.2, 0.7], &[2.0; 3]) - 3.0).abs() < 1e-12);
        assert!((cess(&[0.5, 0.5], &[1.0, 3.0]) - 1.6).abs() < 1e-15);
        let e = ess(&[0.1, 0.2, 0.7]);
        assert!(e >= 1.0 && e <= 3.0);
    }

    #[test]
    fn bisection_inverts_cess_example() {
        let t = next_temperature(&[0.5, 0.5], &[0.0, 9f64.ln()], 0.2, Criterion::Cess(1.6)).unwrap();
        let got = cess_after(&[0.5, 0.5], &[0.0, 9f64.ln()], t - 0.2);
        assert!((got - 1.6).abs() <= 2e-3);
        assert!((t - 0.7).abs() < 1e-3);
    }

    #[test]
    fn constant_likelihood_jumps_to_one() {
        let t = next_temperature(&[0.25; 4], &[-3.0; 4], 0.0, Criterion::Ess(3.9)).unwrap();
        assert_eq!(t, 1.0);
    }

    #[test]
    fn full_target_stalls() {
        let r = next_temperature(&[0.5, 0.5], &[0.0, 1.0], 0.0, Criterion::Ess(2.0));
        assert!(matches!(r, Err(Error::TemperatureStall { .. })));
    }

    #[test]
    fn multinomial_degenerate_cases() {
        assert_eq!(resample_multinomial(&[0.0, 1.0, 0.0], 1, &[]), vec![1, 1, 1]);
        assert_eq!(resample_multinomial(&[1.0], 1, &[]), vec![0]);
        assert_eq!(resample_multinomial(&[0.3, 0.7], 5, &[1]), resample_multinomial(&[0.3, 0.7], 5, &[1]));
    }

    #[test]
    fn multinomial_copy_counts_are_unbiased() {
        let n = 5;
        let reps = 10_000;
        let mut counts = vec![0.0; n];
        let mut sq = vec![0.0; n];
        for s in 0..reps {
            let mut c = vec![0.0; n];
            for a in resample_multinomial(&[0.2; 5], s, &[]) {
                c[a] += 1.0;
            }
            for i in 0..n {
                counts[i] += c[i];
                sq[i] += c[i] * c[i];
            }
        }
        for i in 0..n {
            let m = counts[i] / reps as f64;
            let v = sq[i] / reps as f64 - m * m;
            let se = (v / reps as f64).sqrt();
            assert!((m - 1.0).abs() < 3.0 * se, "particle {i}: {m} ± {se}");
        }
    }
}
