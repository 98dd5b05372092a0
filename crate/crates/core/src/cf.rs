//! Control functionals: kernel regression on the image of an RKHS under the
//! second-order Stein operator, with an unpenalised constant.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polybasis::{build_design_matrix, enumerate_exponents, DEFAULT_MAX_ROWS};
use crate::rng;
use crate::samples::{IntegrandValues, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum KernelKind {
    /// `k(θ, θ′) = exp(−‖θ − θ′‖² / bandwidth)`.
    Gaussian { bandwidth: f64 },
    /// `k(θ, θ′) = Σ_j P_j(θ) P_j(θ′)` over all monomials of degree `1..=degree`.
    Polynomial { degree: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Initial diagonal jitter relative to the mean diagonal of `K0`.
    pub jitter: f64,
}

pub const DEFAULT_JITTER: f64 = 1e-10;
const JITTER_DOUBLINGS: usize = 8;

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Self {
        KernelSpec { kind: KernelKind::Gaussian { bandwidth }, jitter: DEFAULT_JITTER }
    }

    pub fn polynomial(degree: usize) -> Self {
        KernelSpec { kind: KernelKind::Polynomial { degree }, jitter: DEFAULT_JITTER }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            KernelKind::Gaussian { bandwidth } if !(bandwidth > 0.0) || !bandwidth.is_finite() => {
                Err(Error::invalid(format!("gaussian bandwidth must be positive, got {bandwidth}")))
            }
            KernelKind::Polynomial { degree: 0 } => Err(Error::invalid("polynomial kernel needs degree >= 1")),
            _ if !(self.jitter >= 0.0) => Err(Error::invalid("jitter must be nonnegative")),
            _ => Ok(()),
        }
    }
}

/// `L_θ L_θ′ k` for the gaussian kernel with `s = 1/bandwidth`, where
/// `L g = Δg + ∇g·u`.
pub(crate) fn gaussian_stein_kernel(s: f64, x: &[f64], u: &[f64], y: &[f64], v: &[f64]) -> f64 {
    let d = x.len() as f64;
    let mut rho = 0.0;
    let mut ru = 0.0;
    let mut rv = 0.0;
    let mut uv = 0.0;
    for k in 0..x.len() {
        let r = x[k] - y[k];
        rho += r * r;
        ru += r * u[k];
        rv += r * v[k];
        uv += u[k] * v[k];
    }
    let kern = (-s * rho).exp();
    if kern == 0.0 {
        return 0.0;
    }
    let a = 4.0 * s * s * rho - 2.0 * s * d;
    // h = L_θ′ k / k
    let h = a + 2.0 * s * rv;
    let s2 = s * s;
    kern * (h * a - 32.0 * s2 * s * rho + 8.0 * s2 * d - 8.0 * s2 * rv + 8.0 * s2 * ru - 2.0 * s * h * ru
        + 2.0 * s * uv)
}

fn check_gradients(s: &SampleSet) -> Result<()> {
    if !s.has_all_gradients() {
        return Err(Error::invalid("control functionals need every gradient column"));
    }
    Ok(())
}

/// Cross Stein-kernel matrix between the draws of `a` (rows) and `b`.
pub fn stein_kernel_cross(a: &SampleSet, b: &SampleSet, k: &KernelSpec) -> Result<DMatrix<f64>> {
    k.validate()?;
    check_gradients(a)?;
    check_gradients(b)?;
    if a.dim() != b.dim() {
        return Err(Error::invalid("sample sets differ in dimension"));
    }
    match k.kind {
        KernelKind::Polynomial { degree } => {
            let e = enumerate_exponents(a.dim(), degree, None, DEFAULT_MAX_ROWS)?;
            let xa = build_design_matrix(a, &e)?;
            let xb = build_design_matrix(b, &e)?;
            Ok(xa * xb.transpose())
        }
        KernelKind::Gaussian { bandwidth } => {
            let s = 1.0 / bandwidth;
            let (na, nb) = (a.count(), b.count());
            let rows = |set: &SampleSet| -> Vec<(Vec<f64>, Vec<f64>)> {
                (0..set.count())
                    .map(|i| (set.theta_row(i), set.grad_log_target().row(i).iter().copied().collect()))
                    .collect()
            };
            let ra = rows(a);
            let rb = rows(b);
            let data: Vec<Vec<f64>> = ra
                .par_iter()
                .map(|(x, u)| rb.iter().map(|(y, v)| gaussian_stein_kernel(s, x, u, y, v)).collect())
                .collect();
            Ok(DMatrix::from_fn(na, nb, |i, l| data[i][l]))
        }
    }
}

/// The `N × N` matrix `K0[i, l] = L_θ L_θ′ k(θ_i, θ_l)`.
pub fn stein_kernel_matrix(s: &SampleSet, k: &KernelSpec) -> Result<DMatrix<f64>> {
    let mut m = stein_kernel_cross(s, s, k)?;
    // Symmetrise away rounding differences.
    let n = m.nrows();
    for i in 0..n {
        for l in 0..i {
            let v = 0.5 * (m[(i, l)] + m[(l, i)]);
            m[(i, l)] = v;
            m[(l, i)] = v;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfFit {
    pub estimate: f64,
    /// `1ᵀK⁻¹f / 1ᵀK⁻¹1`.
    pub constant: f64,
    pub alpha: Vec<f64>,
    pub jitter: f64,
    pub kernel: KernelSpec,
    pub lambda: f64,
}

/// Factorises `K0 + N·λ·I + jitter` and returns `(constant, α, jitter)`.
fn solve_system(k0: &DMatrix<f64>, f: &[f64], lambda: f64, jitter_rel: f64) -> Result<(f64, Vec<f64>, f64)> {
    let n = k0.nrows();
    let mean_diag = (k0.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = jitter_rel * mean_diag;
    let base = jitter_rel.max(DEFAULT_JITTER) * mean_diag;
    for attempt in 0..=JITTER_DOUBLINGS {
        let mut k = k0.clone();
        for i in 0..n {
            k[(i, i)] += n as f64 * lambda + jitter;
        }
        if let Some(ch) = k.cholesky() {
            let ones = DVector::from_element(n, 1.0);
            let fv = DVector::from_column_slice(f);
            let k1 = ch.solve(&ones);
            let kf = ch.solve(&fv);
            let denom = k1.sum();
            if denom.is_finite() && denom > 0.0 {
                let c = kf.sum() / denom;
                let alpha = kf - k1 * c;
                if alpha.iter().all(|v| v.is_finite()) {
                    if attempt > 0 {
                        warn!("stein kernel needed jitter {jitter:e} after {attempt} doublings");
                    }
                    return Ok((c, alpha.iter().copied().collect(), jitter));
                }
            }
        }
        jitter = if attempt == 0 && jitter < base { base } else { 2.0 * jitter };
    }
    Err(Error::ConditioningError { attempts: JITTER_DOUBLINGS + 1 })
}

/// Control-functional estimate of `E[φ]` with regulariser `lambda`.
pub fn cf_estimate(s: &SampleSet, phi: &IntegrandValues, k: &KernelSpec, lambda: f64) -> Result<CfFit> {
    let n = s.count();
    phi.check_len(n)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("regulariser must be finite and nonnegative"));
    }
    let k0 = stein_kernel_matrix(s, k)?;
    let (c, alpha, jitter) = solve_system(&k0, &phi.values, lambda, k.jitter)?;
    let fitted = &k0 * DVector::from_column_slice(&alpha);
    let estimate = if s.is_uniform() {
        c
    } else {
        s.weights().iter().zip(&phi.values).zip(fitted.iter()).map(|((w, f), g)| w * (f - g)).sum()
    };
    Ok(CfFit { estimate, constant: c, alpha, jitter, kernel: *k, lambda })
}

/// The 15 bandwidths `10^(−3 + 0.5 i)`.
pub fn default_bandwidth_grid() -> Vec<f64> {
    (0..15).map(|i| 10f64.powf(-3.0 + 0.5 * i as f64)).collect()
}

pub const CF_FOLDS: usize = 5;

/// Held-out squared prediction error of the surrogate for each bandwidth.
pub fn cf_cv_errors(s: &SampleSet, phi: &IntegrandValues, grid: &[f64], lambda: f64, seed: u64) -> Result<Vec<f64>> {
    let n = s.count();
    phi.check_len(n)?;
    let folds = CF_FOLDS.min(n);
    if folds < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let perm = rng::permutation(n, seed, &[0x6366_5f62_7766]);
    let mut fold_of = vec![0; n];
    for (p, &i) in perm.iter().enumerate() {
        fold_of[i] = p % folds;
    }
    let split: Vec<(SampleSet, Vec<f64>, SampleSet, Vec<f64>)> = (0..folds)
        .map(|k| {
            let tr: Vec<usize> = (0..n).filter(|&i| fold_of[i] != k).collect();
            let te: Vec<usize> = (0..n).filter(|&i| fold_of[i] == k).collect();
            Ok((
                s.select_rows(&tr)?,
                tr.iter().map(|&i| phi.values[i]).collect(),
                s.select_rows(&te)?,
                te.iter().map(|&i| phi.values[i]).collect(),
            ))
        })
        .collect::<Result<_>>()?;
    grid.par_iter()
        .map(|&bw| {
            let spec = KernelSpec::gaussian(bw);
            let mut err = 0.0;
            for (tr, ftr, te, fte) in &split {
                let k0 = stein_kernel_matrix(tr, &spec)?;
                let (c, alpha, _) = match solve_system(&k0, ftr, lambda, spec.jitter) {
                    Ok(v) => v,
                    Err(Error::ConditioningError { .. }) => return Ok(f64::INFINITY),
                    Err(e) => return Err(e),
                };
                let cross = stein_kernel_cross(te, tr, &spec)?;
                let pred = cross * DVector::from_column_slice(&alpha);
                err += fte.iter().zip(pred.iter()).map(|(f, p)| (f - c - p).powi(2)).sum::<f64>();
            }
            Ok(if err.is_finite() { err / n as f64 } else { f64::INFINITY })
        })
        .collect()
}

/// Picks the gaussian bandwidth by 5-fold CV; ties go to the larger value.
pub fn cf_cv_bandwidth(s: &SampleSet, phi: &IntegrandValues, grid: &[f64], lambda: f64, seed: u64) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::invalid("empty bandwidth grid"));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let errs = cf_cv_errors(s, phi, grid, lambda, seed)?;
    let best = errs.iter().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::ConditioningError { attempts: JITTER_DOUBLINGS + 1 });
    }
    let tie = best + 1e-12 * best.abs();
    let pick = grid
        .iter()
        .zip(&errs)
        .filter(|(_, &e)| e <= tie)
        .map(|(&b, _)| b)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(pick)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{FitOptions, Penalty, Scaling};
    use crate::zvcv::{zvcv_estimate, ZvConfig, ZvSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal) + 0.5);
        let grad = theta.map(|t| -(t - 0.5));
        SampleSet::uniform(theta, grad).unwrap()
    }

    fn kern(s: f64, x: &[f64], y: &[f64]) -> f64 {
        (-s * x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).exp()
    }

    /// `L_θ′ k` from the simple closed forms of ∇′k and Δ′k.
    fn half_operator(s: f64, x: &[f64], y: &[f64], v: &[f64]) -> f64 {
        let d = x.len() as f64;
        let rho: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        let rv: f64 = x.iter().zip(y).zip(v).map(|((a, b), c)| (a - b) * c).sum();
        kern(s, x, y) * (4.0 * s * s * rho - 2.0 * s * d + 2.0 * s * rv)
    }

    #[test]
    fn gaussian_kernel_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let d = rng.random_range(1..4);
            let s = rng.random_range(0.2..2.0);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            // First check the inner closed form against differences of k in θ′.
            let h = 1e-4;
            let mut lap = 0.0;
            let mut dot = 0.0;
            for k in 0..d {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[k] += h;
                ym[k] -= h;
                let (p, m, c) = (kern(s, &x, &yp), kern(s, &x, &ym), kern(s, &x, &y));
                lap += (p - 2.0 * c + m) / (h * h);
                dot += (p - m) / (2.0 * h) * v[k];
            }
            let inner = half_operator(s, &x, &y, &v);
            assert!((lap + dot - inner).abs() <= 1e-6 * inner.abs().max(1.0));
            // Then apply L_θ numerically to the inner expression.
            let h = 1e-3;
            let mut lap = 0.0;
            let mut dot = 0.0;
            let c = half_operator(s, &x, &y, &v);
            for k in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let (p, m) = (half_operator(s, &xp, &y, &v), half_operator(s, &xm, &y, &v));
                lap += (p - 2.0 * c + m) / (h * h);
                dot += (p - m) / (2.0 * h) * u[k];
            }
            let fd = lap + dot;
            let exact = gaussian_stein_kernel(s, &x, &u, &y, &v);
            assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1.0), "{fd} vs {exact}");
        }
    }

    #[test]
    fn gaussian_k0_is_symmetric_psd() {
        let s = gaussian(30, 2, 2);
        let k0 = stein_kernel_cross(&s, &s, &KernelSpec::gaussian(1.5)).unwrap();
        assert!((&k0 - k0.transpose()).amax() <= 1e-10);
        let eig = k0.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-8 * k0.amax());
    }

    #[test]
    fn polynomial_k0_is_design_gram() {
        let s = gaussian(12, 2, 3);
        let k0 = stein_kernel_matrix(&s, &KernelSpec::polynomial(2)).unwrap();
        let e = enumerate_exponents(2, 2, None, DEFAULT_MAX_ROWS).unwrap();
        let x = build_design_matrix(&s, &e).unwrap();
        assert!((k0 - &x * x.transpose()).amax() < 1e-10);
        // Q = 1: the basis covariates are the score itself.
        let k1 = stein_kernel_matrix(&s, &KernelSpec::polynomial(1)).unwrap();
        let g = s.grad_log_target();
        assert!((k1 - g * g.transpose()).amax() < 1e-12);
    }

    #[test]
    fn single_sample() {
        let s = gaussian(1, 2, 4);
        let k0 = stein_kernel_matrix(&s, &KernelSpec::gaussian(1.0)).unwrap();
        assert_eq!(k0.shape(), (1, 1));
        assert!(k0[(0, 0)] >= 0.0);
        let phi = IntegrandValues::new("p", vec![3.25]).unwrap();
        let fit = cf_estimate(&s, &phi, &KernelSpec::gaussian(1.0), 0.0).unwrap();
        assert!((fit.estimate - 3.25).abs() < 1e-12);
    }

    #[test]
    fn constant_integrand() {
        let s = gaussian(20, 2, 5);
        let phi = IntegrandValues::new("c", vec![-1.5; 20]).unwrap();
        for k in [KernelSpec::gaussian(0.3), KernelSpec::gaussian(10.0), KernelSpec::polynomial(2)] {
            for lambda in [0.0, 0.1] {
                let fit = cf_estimate(&s, &phi, &k, lambda).unwrap();
                assert!((fit.estimate + 1.5).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn polynomial_kernel_matches_unstandardised_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let d = rng.random_range(1..=3);
            let q = rng.random_range(1..=3);
            let n = rng.random_range(10..=50);
            let s = gaussian(n, d, rng.random());
            let phi = IntegrandValues::from_fn(&s, "p", |t| t.iter().map(|v| v.sin()).sum()).unwrap();
            let lambda = 10f64.powf(rng.random_range(-3.0..0.0));
            let mut cfg = ZvConfig::default();
            cfg.cv.fit = FitOptions { scaling: Scaling::CentreOnly, ..FitOptions::default() };
            let zv = zvcv_estimate(&s, &phi, &ZvSpec::new(q, Penalty::Ridge).with_lambda(lambda), &cfg).unwrap();
            let cf = cf_estimate(&s, &phi, &KernelSpec::polynomial(q).with_jitter(0.0), lambda).unwrap();
            assert!((zv.estimate - cf.estimate).abs() < 1e-6, "{} vs {}", zv.estimate, cf.estimate);
        }
    }

    #[test]
    fn surrogate_interpolates_without_regulariser() {
        let s = gaussian(25, 1, 7);
        let phi = IntegrandValues::from_fn(&s, "p", |t| (1.3 * t[0]).cos()).unwrap();
        let k = KernelSpec::gaussian(1.0);
        let fit = cf_estimate(&s, &phi, &k, 0.0).unwrap();
        let k0 = stein_kernel_matrix(&s, &k).unwrap();
        let pred = &k0 * DVector::from_column_slice(&fit.alpha);
        let m = phi.values.iter().sum::<f64>() / 25.0;
        let sd = (phi.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 24.0).sqrt();
        for i in 0..25 {
            assert!((fit.constant + pred[i] - phi.values[i]).abs() <= 1e-4 * sd);
        }
    }

    #[test]
    fn weighted_estimate_uses_weights_only_outside() {
        let s = gaussian(20, 1, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w: Vec<f64> = (0..20).map(|_| rng.random_range(0.5..1.5)).collect();
        let t: f64 = w.iter().sum();
        let sw = s.with_weights(w.iter().map(|v| v / t).collect()).unwrap();
        let phi = IntegrandValues::from_fn(&s, "p", |t| t[0] * t[0]).unwrap();
        let k = KernelSpec::gaussian(2.0);
        let a = cf_estimate(&s, &phi, &k, 0.01).unwrap();
        let b = cf_estimate(&sw, &phi, &k, 0.01).unwrap();
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.constant, b.constant);
        let k0 = stein_kernel_matrix(&s, &k).unwrap();
        let g = &k0 * DVector::from_column_slice(&b.alpha);
        let direct: f64 = (0..20).map(|i| sw.weights()[i] * (phi.values[i] - g[i])).sum();
        assert!((b.estimate - direct).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_grid_and_selection() {
        let g = default_bandwidth_grid();
        assert_eq!(g.len(), 15);
        assert!((g[0] - 1e-3).abs() < 1e-15);
        assert!((g[14] - 1e4).abs() < 1e-8);
        let s = gaussian(40, 1, 9);
        let phi = IntegrandValues::from_fn(&s, "p", |t| (0.3 * t[0]).sin()).unwrap();
        assert_eq!(cf_cv_bandwidth(&s, &phi, &[0.7], 0.0, 1).unwrap(), 0.7);
        let bw = cf_cv_bandwidth(&s, &phi, &g, 0.0, 1).unwrap();
        assert!(bw > g[0]);
    }

    #[test]
    fn rejects_bad_bandwidth() {
        let s = gaussian(5, 1, 10);
        assert!(stein_kernel_matrix(&s, &KernelSpec::gaussian(0.0)).is_err());
    }
}
