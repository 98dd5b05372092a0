use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Columns whose standard deviation falls below this (relative to the column
/// magnitude, floored at one) are treated as constant.
pub const ZERO_SD_TOL: f64 = 1e-12;

/// Location and scale used to standardise a regression problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardisation {
    pub response_mean: f64,
    /// Zero when the response is constant; the standardised response is then
    /// identically zero.
    pub response_sd: f64,
    pub covariate_means: Vec<f64>,
    pub covariate_sds: Vec<f64>,
    pub dropped: Vec<usize>,
    pub retained: Vec<usize>,
}

impl Standardisation {
    /// Maps coefficients of the standardised columns back to the original
    /// scale. Dropped columns get a zero coefficient.
    pub fn unscale(&self, coef_s: &[f64]) -> Vec<f64> {
        let mut coef = vec![0.0; self.covariate_means.len()];
        for (c_s, &j) in coef_s.iter().zip(&self.retained) {
            coef[j] = c_s * self.response_sd / self.covariate_sds[j];
        }
        coef
    }
}

/// Standardised design and response.
#[derive(Debug, Clone)]
pub struct Standardised {
    /// Retained columns only, in the order of `stats.retained`.
    pub x: DMatrix<f64>,
    pub f: DVector<f64>,
    pub stats: Standardisation,
}

/// Weighted mean and reliability-weighted sd `Σw(a−ā)²/(1−Σw²)`, which is the
/// `N−1` formula for uniform weights.
pub(crate) fn weighted_mean_sd(a: impl Iterator<Item = f64> + Clone, w: &[f64], w2: f64) -> (f64, f64) {
    let mean: f64 = a.clone().zip(w).map(|(v, wi)| wi * v).sum();
    let ss: f64 = a.zip(w).map(|(v, wi)| wi * (v - mean) * (v - mean)).sum();
    (mean, (ss / (1.0 - w2)).sqrt())
}

/// Centres and scales every column of `x` and the response `f` by their
/// weighted mean and standard deviation.
pub fn standardise(x: &DMatrix<f64>, f: &[f64], w: &[f64]) -> Result<Standardised> {
    let (n, j) = x.shape();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if f.len() != n || w.len() != n {
        return Err(Error::invalid("standardise: length mismatch"));
    }
    if x.iter().chain(f).chain(w).any(|v| !v.is_finite()) {
        return Err(Error::invalid("standardise: non-finite input"));
    }
    let w2: f64 = w.iter().map(|v| v * v).sum();
    if 1.0 - w2 <= 0.0 {
        return Err(Error::InsufficientSamples { needed: 2, got: 1 });
    }

    let (f_mean, f_sd) = weighted_mean_sd(f.iter().copied(), w, w2);
    let f_scale = f.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let f_sd = if f_sd <= ZERO_SD_TOL * f_scale { 0.0 } else { f_sd };
    let f_s = DVector::from_iterator(
        n,
        f.iter().map(|v| if f_sd > 0.0 { (v - f_mean) / f_sd } else { 0.0 }),
    );

    let mut means = Vec::with_capacity(j);
    let mut sds = Vec::with_capacity(j);
    let mut retained = Vec::with_capacity(j);
    let mut dropped = Vec::new();
    for c in 0..j {
        let col = x.column(c);
        let (m, sd) = weighted_mean_sd(col.iter().copied(), w, w2);
        let scale = col.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        means.push(m);
        sds.push(sd);
        if sd <= ZERO_SD_TOL * scale {
            dropped.push(c);
        } else {
            retained.push(c);
        }
    }
    let mut x_s = DMatrix::zeros(n, retained.len());
    for (out, &c) in retained.iter().enumerate() {
        let (m, sd) = (means[c], sds[c]);
        for i in 0..n {
            x_s[(i, out)] = (x[(i, c)] - m) / sd;
        }
    }
    Ok(Standardised {
        x: x_s,
        f: f_s,
        stats: Standardisation {
            response_mean: f_mean,
            response_sd: f_sd,
            covariate_means: means,
            covariate_sds: sds,
            dropped,
            retained,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::uniform_weights;

    #[test]
    fn hand_computed_three_points() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let s = standardise(&x, &[2.0, 4.0, 6.0], &uniform_weights(3)).unwrap();
        for (a, b) in s.x.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in s.f.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(s.stats.response_mean, 4.0);
        assert!((s.stats.response_sd - 2.0).abs() < 1e-15);
        assert!((s.stats.covariate_sds[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_column_is_dropped() {
        let x = DMatrix::from_column_slice(3, 2, &[5.0, 5.0, 5.0, 1.0, 2.0, 4.0]);
        let s = standardise(&x, &[1.0, 0.0, 1.0], &uniform_weights(3)).unwrap();
        assert_eq!(s.stats.dropped, vec![0]);
        assert_eq!(s.stats.retained, vec![1]);
        assert_eq!(s.x.ncols(), 1);
        assert!(s.x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn idempotent_on_standardised_input() {
        let x = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 1.0]);
        let s = standardise(&x, &[-1.0, 0.0, 1.0], &uniform_weights(3)).unwrap();
        assert!((s.x.clone() - x).amax() < 1e-12);
        assert!(s.stats.covariate_means[0].abs() < 1e-12);
        assert!((s.stats.covariate_sds[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let x = DMatrix::from_column_slice(1, 1, &[1.0]);
        assert!(matches!(
            standardise(&x, &[1.0], &[1.0]),
            Err(Error::InsufficientSamples { .. })
        ));
        let x = DMatrix::from_column_slice(2, 1, &[1.0, f64::INFINITY]);
        assert!(matches!(
            standardise(&x, &[1.0, 2.0], &[0.5, 0.5]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn unscale_inverts_scaling() {
        let x = DMatrix::from_column_slice(4, 2, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0, 5.0, 5.0]);
        let s = standardise(&x, &[1.0, 3.0, 2.0, 7.0], &uniform_weights(4)).unwrap();
        let b = s.stats.unscale(&[0.7]);
        assert_eq!(b[1], 0.0);
        assert_eq!(b[0], 0.7 * s.stats.response_sd / s.stats.covariate_sds[0]);
    }
}
