use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::TargetModel;
use crate::rng;

/// A particle with its cached log-densities and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub theta: Vec<f64>,
    pub log_like: f64,
    pub log_prior: f64,
    pub grad_log_like: Vec<f64>,
    pub grad_log_prior: Vec<f64>,
}

impl Particle {
    /// Evaluates the model at `theta`; `None` if any quantity is not finite.
    pub fn evaluate(model: &dyn TargetModel, theta: Vec<f64>) -> Option<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let log_prior = model.log_prior(&theta);
        let log_like = model.log_like(&theta);
        if !log_prior.is_finite() || !log_like.is_finite() {
            return None;
        }
        let grad_log_prior = model.grad_log_prior(&theta);
        let grad_log_like = model.grad_log_like(&theta);
        if grad_log_prior.iter().chain(&grad_log_like).any(|v| !v.is_finite()) {
            return None;
        }
        Some(Particle { theta, log_like, log_prior, grad_log_like, grad_log_prior })
    }

    pub fn log_target(&self, t: f64) -> f64 {
        t * self.log_like + self.log_prior
    }

    pub fn grad(&self, t: f64) -> Vec<f64> {
        self.grad_log_prior.iter().zip(&self.grad_log_like).map(|(p, l)| p + t * l).collect()
    }
}

/// Proposal covariance `Σ̂` with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    pub cov: DMatrix<f64>,
    l: DMatrix<f64>,
}

impl Preconditioner {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        let l = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("proposal covariance is not positive definite"))?
            .l();
        Ok(Preconditioner { cov, l })
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d)).expect("identity is positive definite")
    }

    /// Weighted empirical covariance plus `1e-8·trace/d·I`.
    pub fn from_particles(thetas: &[&[f64]], weights: &[f64]) -> Result<Self> {
        let d = thetas.first().map_or(0, |t| t.len());
        if d == 0 {
            return Err(Error::invalid("no particles"));
        }
        let total: f64 = weights.iter().sum();
        let mut mean = vec![0.0; d];
        for (t, w) in thetas.iter().zip(weights) {
            for k in 0..d {
                mean[k] += w / total * t[k];
            }
        }
        let mut cov = DMatrix::zeros(d, d);
        for (t, w) in thetas.iter().zip(weights) {
            let r = DVector::from_iterator(d, (0..d).map(|k| t[k] - mean[k]));
            cov += (w / total) * &r * r.transpose();
        }
        let tr = cov.trace();
        if !(tr > 0.0) || !tr.is_finite() {
            warn!("particle cloud has no spread; using an identity proposal covariance");
            return Ok(Self::identity(d));
        }
        for k in 0..d {
            cov[(k, k)] += 1e-8 * tr / d as f64;
        }
        Self::new(cov)
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    /// `‖L⁻¹ x‖²`, the squared Mahalanobis length of `x`.
    pub fn mahalanobis2(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        self.l.solve_lower_triangular(&v).map_or(f64::INFINITY, |z| z.norm_squared())
    }

    fn sqrt_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.l * z
    }

    fn cov_mul(&self, g: &[f64]) -> DVector<f64> {
        &self.cov * DVector::from_column_slice(g)
    }
}

/// One MALA proposal and accept/reject.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub particle: Particle,
    pub accepted: bool,
    /// `min(1, MH ratio)`, zero for rejected non-finite proposals.
    pub alpha: f64,
    /// Squared Mahalanobis length of the proposed jump.
    pub proposal_jump2: f64,
}

pub(crate) fn log_q(to: &[f64], from: &Particle, t: f64, h: f64, pc: &Preconditioner) -> f64 {
    let drift = pc.cov_mul(&from.grad(t));
    let r: Vec<f64> = (0..to.len()).map(|k| to[k] - from.theta[k] - 0.5 * h * h * drift[k]).collect();
    -pc.mahalanobis2(&r) / (2.0 * h * h)
}

pub fn mala_step<R: Rng>(
    model: &dyn TargetModel,
    p: &Particle,
    t: f64,
    h: f64,
    pc: &Preconditioner,
    rng: &mut R,
) -> StepOutcome {
    let d = p.theta.len();
    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let drift = pc.cov_mul(&p.grad(t));
    let noise = pc.sqrt_mul(&z);
    let prop: Vec<f64> = (0..d).map(|k| p.theta[k] + 0.5 * h * h * drift[k] + h * noise[k]).collect();
    let jump2 = h * h * z.norm_squared();
    let u: f64 = rng.random();
    let reject = |alpha| StepOutcome { particle: p.clone(), accepted: false, alpha, proposal_jump2: jump2 };
    let Some(q) = Particle::evaluate(model, prop) else {
        return reject(0.0);
    };
    let log_ratio = q.log_target(t) - p.log_target(t) + log_q(&p.theta, &q, t, h, pc) - log_q(&q.theta, p, t, h, pc);
    if !log_ratio.is_finite() && log_ratio != f64::INFINITY {
        return reject(0.0);
    }
    let alpha = log_ratio.min(0.0).exp();
    if u.ln() < log_ratio {
        StepOutcome { particle: q, accepted: true, alpha, proposal_jump2: jump2 }
    } else {
        reject(alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoveStats {
    pub acceptance_rate: f64,
    /// Per-particle sum of Mahalanobis lengths of accepted moves.
    pub total_jumps: Vec<f64>,
}

/// One MALA sweep over all particles in parallel; `tags` identify the
/// sweep so every particle draws from its own stream.
pub fn mala_sweep(
    model: &dyn TargetModel,
    particles: &mut [Particle],
    t: f64,
    h: f64,
    pc: &Preconditioner,
    seed: u64,
    tags: &[u64],
) -> (usize, Vec<f64>) {
    let out: Vec<(bool, f64)> = particles
        .par_iter_mut()
        .enumerate()
        .map(|(i, p)| {
            let mut t_ = tags.to_vec();
            t_.push(i as u64);
            let mut r = rng::stream(seed, &t_);
            let o = mala_step(model, p, t, h, pc, &mut r);
            let jump = if o.accepted { o.proposal_jump2.sqrt() } else { 0.0 };
            *p = o.particle;
            (o.accepted, jump)
        })
        .collect();
    (out.iter().filter(|o| o.0).count(), out.iter().map(|o| o.1).collect())
}

/// `n_repeats` sweeps of MALA targeting `p_t`.
pub fn mala_move(
    model: &dyn TargetModel,
    particles: &mut [Particle],
    t: f64,
    h: f64,
    pc: &Preconditioner,
    n_repeats: usize,
    seed: u64,
    tags: &[u64],
) -> MoveStats {
    let n = particles.len();
    let mut acc = 0;
    let mut total = vec![0.0; n];
    for r in 0..n_repeats {
        let mut t_ = tags.to_vec();
        t_.push(r as u64);
        let (a, j) = mala_sweep(model, particles, t, h, pc, seed, &t_);
        acc += a;
        for (x, y) in total.iter_mut().zip(j) {
            *x += y;
        }
    }
    let denom = (n * n_repeats).max(1) as f64;
    MoveStats { acceptance_rate: acc as f64 / denom, total_jumps: total }
}

/// `n` step sizes log-uniform on `[h_min, h_max]`.
pub fn step_grid(h_min: f64, h_max: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![h_min];
    }
    let (a, b) = (h_min.ln(), h_max.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Trials each step size once per particle and returns the one with the
/// largest median ESJD (acceptance probability times squared Mahalanobis
/// jump), with ties going to the larger step. Also returns the medians.
pub fn tune_step_size(
    model: &dyn TargetModel,
    particles: &[Particle],
    t: f64,
    grid: &[f64],
    pc: &Preconditioner,
    seed: u64,
    tags: &[u64],
) -> (f64, Vec<f64>) {
    if grid.len() == 1 {
        return (grid[0], vec![f64::NAN]);
    }
    let medians: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(gi, &h)| {
            let mut esjd: Vec<f64> = particles
                .par_iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut t_ = tags.to_vec();
                    t_.extend([gi as u64, i as u64]);
                    let mut r = rng::stream(seed, &t_);
                    let o = mala_step(model, p, t, h, pc, &mut r);
                    o.alpha * o.proposal_jump2
                })
                .collect();
            median(&mut esjd)
        })
        .collect();
    let best = medians.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !(best > 0.0) {
        warn!("every step size was rejected at t = {t}; using the smallest");
        return (grid.iter().copied().fold(f64::INFINITY, f64::min), medians);
    }
    let h = grid
        .iter()
        .zip(&medians)
        .filter(|(_, &m)| m >= best)
        .map(|(&h, _)| h)
        .fold(f64::NEG_INFINITY, f64::max);
    (h, medians)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JumpStat {
    #[default]
    Mean,
    Median,
}

const PAIR_SAMPLES: usize = 20_000;

/// Mean (or median) Mahalanobis distance between two particles drawn
/// independently according to `weights`, estimated from a fixed number of
/// seeded pairs.
pub fn pairwise_mahalanobis(
    thetas: &[&[f64]],
    weights: &[f64],
    pc: &Preconditioner,
    stat: JumpStat,
    seed: u64,
    tags: &[u64],
) -> f64 {
    let n = thetas.len();
    if n < 2 {
        return 0.0;
    }
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cum.push(acc);
    }
    let mut r = rng::stream(seed, tags);
    let draw = |r: &mut rand_chacha::ChaCha8Rng| {
        let u = r.random::<f64>() * acc;
        cum.partition_point(|&c| c <= u).min(n - 1)
    };
    let mut d = Vec::with_capacity(PAIR_SAMPLES);
    let mut tries = 0;
    while d.len() < PAIR_SAMPLES && tries < 4 * PAIR_SAMPLES {
        tries += 1;
        let (i, j) = (draw(&mut r), draw(&mut r));
        if i == j {
            continue;
        }
        let diff: Vec<f64> = thetas[i].iter().zip(thetas[j]).map(|(a, b)| a - b).collect();
        d.push(pc.mahalanobis2(&diff).sqrt());
    }
    if d.is_empty() {
        return 0.0;
    }
    match stat {
        JumpStat::Mean => d.iter().sum::<f64>() / d.len() as f64,
        JumpStat::Median => median(&mut d),
    }
}

/// Runs sweeps until at least `fraction` of particles have a total jump
/// above `threshold`, up to `cap` sweeps. `sweep(r)` performs sweep `r`
/// and returns each particle's jump length. Returns the sweep count.
pub fn choose_num_repeats(
    mut sweep: impl FnMut(usize) -> Vec<f64>,
    threshold: f64,
    fraction: f64,
    cap: usize,
) -> usize {
    let mut total: Vec<f64> = Vec::new();
    for r in 0..cap.max(1) {
        let j = sweep(r);
        if total.is_empty() {
            total = vec![0.0; j.len()];
        }
        for (x, y) in total.iter_mut().zip(j) {
            *x += y;
        }
        let far = total.iter().filter(|&&v| v > threshold).count() as f64;
        if far >= fraction * total.len() as f64 {
            return r + 1;
        }
    }
    warn!("particles did not reach the jump threshold within {cap} sweeps");
    cap.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GaussianModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std_normal(d: usize) -> GaussianModel {
        GaussianModel::diagonal(vec![0.0; d], &vec![1.0; d]).unwrap()
    }

    #[test]
    fn tiny_step_always_accepts() {
        let m = std_normal(2);
        let pc = Preconditioner::identity(2);
        let mut ps: Vec<Particle> = (0..200)
            .map(|i| Particle::evaluate(&m, vec![(i as f64 * 0.1).sin(), (i as f64 * 0.3).cos()]).unwrap())
            .collect();
        let before = ps.clone();
        let stats = mala_move(&m, &mut ps, 1.0, 1e-6, &pc, 1, 1, &[]);
        assert!(stats.acceptance_rate > 0.99);
        for (a, b) in ps.iter().zip(&before) {
            for k in 0..2 {
                assert!((a.theta[k] - b.theta[k]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn long_chain_has_correct_moments() {
        let m = std_normal(1);
        let pc = Preconditioner::identity(1);
        let mut p = Particle::evaluate(&m, vec![0.0]).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                p = mala_step(&m, &p, 1.0, 1.2, &pc, &mut r).particle;
                p.theta[0]
            })
            .collect();
        // Batch means for the standard errors.
        let b = 100;
        let check = |f: &dyn Fn(f64) -> f64, target: f64| {
            let means: Vec<f64> = xs.chunks(n / b).map(|c| c.iter().map(|&x| f(x)).sum::<f64>() / c.len() as f64).collect();
            let m = means.iter().sum::<f64>() / b as f64;
            let se = (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b - 1) as f64 / b as f64).sqrt();
            assert!((m - target).abs() < 3.0 * se, "{m} vs {target} (se {se})");
        };
        check(&|x| x, 0.0);
        check(&|x| x * x, 1.0);
    }

    struct HalfLine;
    impl TargetModel for HalfLine {
        fn name(&self) -> &str {
            "half"
        }
        fn dim(&self) -> usize {
            1
        }
        fn log_prior(&self, t: &[f64]) -> f64 {
            if t[0] > 0.0 { -t[0] } else { f64::NEG_INFINITY }
        }
        fn grad_log_prior(&self, _t: &[f64]) -> Vec<f64> {
            vec![-1.0]
        }
        fn log_like(&self, _t: &[f64]) -> f64 {
            0.0
        }
        fn grad_log_like(&self, _t: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn sample_prior(&self, n: usize, _seed: u64) -> DMatrix<f64> {
            DMatrix::from_element(n, 1, 1.0)
        }
        fn boundary_note(&self) -> &'static str {
            ""
        }
    }

    #[test]
    fn zero_density_proposals_are_rejected() {
        let m = HalfLine;
        let pc = Preconditioner::identity(1);
        let p = Particle::evaluate(&m, vec![1e-3]).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut rejected = 0;
        for _ in 0..200 {
            let o = mala_step(&m, &p, 1.0, 5.0, &pc, &mut r);
            if o.particle.theta[0] <= 0.0 {
                panic!("accepted a zero-density point");
            }
            if !o.accepted {
                rejected += 1;
            }
        }
        assert!(rejected > 50);
    }

    #[test]
    fn tuning_picks_an_interior_step() {
        let m = std_normal(2);
        let pc = Preconditioner::identity(2);
        let draws = m.sample_prior(500, 4);
        let ps: Vec<Particle> = (0..500)
            .map(|i| Particle::evaluate(&m, draws.row(i).iter().copied().collect()).unwrap())
            .collect();
        let grid = step_grid(0.01, 10.0, 20);
        let (h, med) = tune_step_size(&m, &ps, 1.0, &grid, &pc, 5, &[]);
        assert!(h > grid[0] && h < grid[19], "h = {h}, medians {med:?}");
        assert_eq!(tune_step_size(&m, &ps, 1.0, &[0.3], &pc, 5, &[]).0, 0.3);
    }

    #[test]
    fn all_rejected_falls_back_to_smallest_step() {
        struct Wall;
        impl TargetModel for Wall {
            fn name(&self) -> &str {
                "wall"
            }
            fn dim(&self) -> usize {
                1
            }
            fn log_prior(&self, t: &[f64]) -> f64 {
                if t[0] == 0.5 { 0.0 } else { f64::NEG_INFINITY }
            }
            fn grad_log_prior(&self, _t: &[f64]) -> Vec<f64> {
                vec![0.0]
            }
            fn log_like(&self, _t: &[f64]) -> f64 {
                0.0
            }
            fn grad_log_like(&self, _t: &[f64]) -> Vec<f64> {
                vec![0.0]
            }
            fn sample_prior(&self, n: usize, _s: u64) -> DMatrix<f64> {
                DMatrix::from_element(n, 1, 0.5)
            }
            fn boundary_note(&self) -> &'static str {
                ""
            }
        }
        let ps = vec![Particle::evaluate(&Wall, vec![0.5]).unwrap(); 10];
        let grid = step_grid(0.1, 1.0, 5);
        let (h, _) = tune_step_size(&Wall, &ps, 1.0, &grid, &Preconditioner::identity(1), 1, &[]);
        assert_eq!(h, grid[0]);
        // A frozen kernel never reaches the jump threshold.
        let n = choose_num_repeats(|_| vec![0.0; 10], 0.5, 0.5, 100);
        assert_eq!(n, 100);
    }

    #[test]
    fn repeat_rule_edge_cases() {
        assert_eq!(choose_num_repeats(|_| vec![0.0; 4], 1.0, 0.0, 100), 1);
        assert_eq!(choose_num_repeats(|_| vec![5.0; 4], 1.0, 0.5, 100), 1);
        assert_eq!(choose_num_repeats(|_| vec![0.4; 4], 1.0, 0.5, 100), 3);
    }

    #[test]
    fn covariance_and_distance() {
        let pts = [vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 4.0], vec![2.0, 4.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|v| v.as_slice()).collect();
        let pc = Preconditioner::from_particles(&refs, &[0.25; 4]).unwrap();
        assert!((pc.cov[(0, 0)] - 1.0).abs() < 1e-6);
        assert!((pc.cov[(1, 1)] - 4.0).abs() < 1e-6);
        assert!(pc.cov[(0, 1)].abs() < 1e-12);
        assert!((pc.mahalanobis2(&[1.0, 2.0]) - 2.0).abs() < 1e-6);
        let d = pairwise_mahalanobis(&refs, &[0.25; 4], &pc, JumpStat::Mean, 1, &[]);
        // Pair distances are 2, 2 and 2√2 with frequencies 1/3 each.
        let exact = (2.0 + 2.0 + 8f64.sqrt()) / 3.0;
        assert!((d - exact).abs() < 0.02);
    }
}
