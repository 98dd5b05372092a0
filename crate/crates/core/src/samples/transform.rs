use serde::{Deserialize, Serialize};

use super::SampleSet;
use crate::error::{Error, Result};

/// Coordinatewise reparameterisation `ψ = f(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordTransform {
    Identity,
    /// `ψ = log θ` on `θ > 0`.
    Log,
    /// `ψ = log(θ/(1−θ))` on `0 < θ < 1`.
    Logit,
}

impl CoordTransform {
    fn name(self) -> &'static str {
        match self {
            CoordTransform::Identity => "identity",
            CoordTransform::Log => "log",
            CoordTransform::Logit => "logit",
        }
    }

    pub fn forward(self, theta: f64, coord: usize) -> Result<f64> {
        let bad = || Error::DomainError {
            map: self.name(),
            coord,
            value: theta,
        };
        match self {
            CoordTransform::Identity => Ok(theta),
            CoordTransform::Log if theta > 0.0 => Ok(theta.ln()),
            CoordTransform::Logit if theta > 0.0 && theta < 1.0 => Ok((theta / (1.0 - theta)).ln()),
            _ => Err(bad()),
        }
    }

    pub fn inverse(self, psi: f64) -> f64 {
        match self {
            CoordTransform::Identity => psi,
            CoordTransform::Log => psi.exp(),
            CoordTransform::Logit => sigmoid(psi),
        }
    }

    /// `dθ/dψ` expressed through `θ`.
    fn jacobian(self, theta: f64) -> f64 {
        match self {
            CoordTransform::Identity => 1.0,
            CoordTransform::Log => theta,
            CoordTransform::Logit => theta * (1.0 - theta),
        }
    }

    /// `log |dθ/dψ|` as a function of `ψ`.
    fn log_jacobian(self, psi: f64) -> f64 {
        match self {
            CoordTransform::Identity => 0.0,
            CoordTransform::Log => psi,
            CoordTransform::Logit => -softplus(-psi) - softplus(psi),
        }
    }

    /// `d/dψ log |dθ/dψ|` expressed through `θ`.
    fn log_jacobian_slope(self, theta: f64) -> f64 {
        match self {
            CoordTransform::Identity => 0.0,
            CoordTransform::Log => 1.0,
            CoordTransform::Logit => 1.0 - 2.0 * theta,
        }
    }
}

/// A transform per coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterTransform(pub Vec<CoordTransform>);

impl ParameterTransform {
    pub fn identity(d: usize) -> Self {
        Self(vec![CoordTransform::Identity; d])
    }

    pub fn uniform(kind: CoordTransform, d: usize) -> Self {
        Self(vec![kind; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Maps an unconstrained point back to the original scale.
    pub fn to_original(&self, psi: &[f64]) -> Vec<f64> {
        psi.iter().zip(&self.0).map(|(&p, t)| t.inverse(p)).collect()
    }
}

/// Moves a sample set to `ψ = f(θ)`.
///
/// The returned gradient is that of `log p_ψ(ψ) = log p_θ(f⁻¹(ψ)) + log|df⁻¹/dψ|`;
/// cached log-priors absorb the log-Jacobian, log-likelihoods are unchanged.
pub fn transform_samples(s: &SampleSet, map: &ParameterTransform) -> Result<SampleSet> {
    let d = s.dim();
    if map.dim() != d {
        return Err(Error::invalid(format!("transform has {} coordinates, samples have {d}", map.dim())));
    }
    let mut out = s.clone();
    let n = s.count();
    let mut log_jac = vec![0.0; n];
    {
        let (theta, grad, _) = out.parts_mut();
        for (k, t) in map.0.iter().enumerate() {
            for i in 0..n {
                let th = theta[(i, k)];
                let psi = t.forward(th, k)?;
                theta[(i, k)] = psi;
                grad[(i, k)] = grad[(i, k)] * t.jacobian(th) + t.log_jacobian_slope(th);
                log_jac[i] += t.log_jacobian(psi);
            }
        }
    }
    shift_log_prior(&mut out, &log_jac, 1.0);
    Ok(out)
}

/// Undoes [`transform_samples`].
pub fn inverse_transform_samples(s: &SampleSet, map: &ParameterTransform) -> Result<SampleSet> {
    let d = s.dim();
    if map.dim() != d {
        return Err(Error::invalid(format!("transform has {} coordinates, samples have {d}", map.dim())));
    }
    let mut out = s.clone();
    let n = s.count();
    let mut log_jac = vec![0.0; n];
    {
        let (theta, grad, _) = out.parts_mut();
        for (k, t) in map.0.iter().enumerate() {
            for i in 0..n {
                let psi = theta[(i, k)];
                let th = t.inverse(psi);
                let jac = t.jacobian(th);
                if !(jac > 0.0) {
                    return Err(Error::DomainError {
                        map: t.name(),
                        coord: k,
                        value: psi,
                    });
                }
                theta[(i, k)] = th;
                grad[(i, k)] = (grad[(i, k)] - t.log_jacobian_slope(th)) / jac;
                log_jac[i] += t.log_jacobian(psi);
            }
        }
    }
    shift_log_prior(&mut out, &log_jac, -1.0);
    Ok(out)
}

fn shift_log_prior(s: &mut SampleSet, log_jac: &[f64], sign: f64) {
    let (_, _, log_prior) = s.parts_mut();
    if let Some(lp) = log_prior.as_mut() {
        for (v, j) in lp.iter_mut().zip(log_jac) {
            *v += sign * j;
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::uniform_weights;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn one(theta: f64, grad: f64) -> SampleSet {
        SampleSet::new(
            DMatrix::from_element(1, 1, theta),
            DMatrix::from_element(1, 1, grad),
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn identity_is_a_no_op() {
        let s = one(0.3, -1.2);
        assert_eq!(transform_samples(&s, &ParameterTransform::identity(1)).unwrap(), s);
    }

    #[test]
    fn log_map_jacobian_term() {
        let s = one(1.0, 0.0);
        let t = transform_samples(&s, &ParameterTransform::uniform(CoordTransform::Log, 1)).unwrap();
        assert_eq!(t.theta()[(0, 0)], 0.0);
        assert!((t.grad_log_target()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn logit_uniform_density_is_flat_at_half() {
        let s = one(0.5, 0.0);
        let t = transform_samples(&s, &ParameterTransform::uniform(CoordTransform::Logit, 1)).unwrap();
        assert!(t.theta()[(0, 0)].abs() < 1e-15);
        assert!(t.grad_log_target()[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        let s = one(1.5, 0.0);
        let r = transform_samples(&s, &ParameterTransform::uniform(CoordTransform::Logit, 1));
        assert!(matches!(r, Err(Error::DomainError { .. })));
        let s = one(-0.1, 0.0);
        let r = transform_samples(&s, &ParameterTransform::uniform(CoordTransform::Log, 1));
        assert!(matches!(r, Err(Error::DomainError { .. })));
    }

    // Gamma(3, 2) for the log map and Beta(2.5, 4) for the logit map.
    fn log_p_theta(kind: CoordTransform, th: f64) -> f64 {
        match kind {
            CoordTransform::Identity => -0.5 * th * th,
            CoordTransform::Log => 2.0 * th.ln() - 2.0 * th,
            CoordTransform::Logit => 1.5 * th.ln() + 3.0 * (1.0 - th).ln(),
        }
    }

    fn grad_p_theta(kind: CoordTransform, th: f64) -> f64 {
        match kind {
            CoordTransform::Identity => -th,
            CoordTransform::Log => 2.0 / th - 2.0,
            CoordTransform::Logit => 1.5 / th - 3.0 / (1.0 - th),
        }
    }

    fn check_fd(kind: CoordTransform, th: f64) {
        let s = one(th, grad_p_theta(kind, th))
            .with_log_densities(vec![0.0], vec![log_p_theta(kind, th)])
            .unwrap();
        let map = ParameterTransform::uniform(kind, 1);
        let t = transform_samples(&s, &map).unwrap();
        let psi = t.theta()[(0, 0)];
        let log_p_psi = |p: f64| log_p_theta(kind, kind.inverse(p)) + kind.log_jacobian(p);
        let h = 1e-5;
        let fd = (log_p_psi(psi + h) - log_p_psi(psi - h)) / (2.0 * h);
        let an = t.grad_log_target()[(0, 0)];
        assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{kind:?} {th}: {fd} vs {an}");
        assert!((t.log_prior().unwrap()[0] - log_p_psi(psi)).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences(th in 0.05f64..0.95, kind in 0usize..3) {
            let kind = [CoordTransform::Identity, CoordTransform::Log, CoordTransform::Logit][kind];
            check_fd(kind, th);
        }

        #[test]
        fn inverse_round_trip(th in proptest::collection::vec(0.01f64..0.99, 6), g in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let theta = DMatrix::from_row_slice(2, 3, &th);
            let grad = DMatrix::from_row_slice(2, 3, &g);
            let s = SampleSet::new(theta, grad, uniform_weights(2)).unwrap();
            let map = ParameterTransform(vec![CoordTransform::Identity, CoordTransform::Log, CoordTransform::Logit]);
            let back = inverse_transform_samples(&transform_samples(&s, &map).unwrap(), &map).unwrap();
            prop_assert!((back.theta() - s.theta()).amax() < 1e-10);
            prop_assert!((back.grad_log_target() - s.grad_log_target()).amax() < 1e-8);
        }
    }
}
