//! Total-degree monomial bases and their images under the Langevin Stein
//! operator `g ↦ Δg + ∇g·∇log p`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samples::SampleSet;

/// Default cap on the number of basis rows.
pub const DEFAULT_MAX_ROWS: usize = 1_000_000;

/// Sorted, nonempty set of coordinates (0-based) a polynomial may depend on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubsetSpec(Vec<usize>);

impl SubsetSpec {
    pub fn new(mut idx: Vec<usize>, dim: usize) -> Result<Self> {
        idx.sort_unstable();
        idx.dedup();
        if idx.is_empty() {
            return Err(Error::invalid("subset must be nonempty"));
        }
        if let Some(&k) = idx.iter().find(|&&k| k >= dim) {
            return Err(Error::invalid(format!("subset index {k} out of range for d = {dim}")));
        }
        Ok(Self(idx))
    }

    pub fn full(dim: usize) -> Self {
        Self((0..dim).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `C(m + q, m) − 1`, or `None` on overflow.
pub fn basis_size(m: usize, q: usize) -> Option<u128> {
    // C(m+q, q) built incrementally stays integral at every step.
    let mut c: u128 = 1;
    for i in 1..=q as u128 {
        c = c.checked_mul(m as u128 + i)? / i;
    }
    Some(c - 1)
}

/// The `J × d` exponent matrix of all monomials with total degree in `1..=Q`.
///
/// Rows are stored sparsely as `(coordinate, power)` pairs with nonzero power,
/// in graded order: ascending total degree, then descending lexicographic order
/// of the exponent vector (so `θ₁` precedes `θ₂` and `θ₁²` precedes `θ₁θ₂`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExponentMatrix {
    rows: Vec<Vec<(usize, u32)>>,
    degree: usize,
    dim: usize,
}

impl ExponentMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Regression coefficients including the intercept, `J + 1`.
    pub fn n_coefficients(&self) -> usize {
        self.rows.len() + 1
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sparse_row(&self, j: usize) -> &[(usize, u32)] {
        &self.rows[j]
    }

    /// Row `j` as a length-`d` exponent vector.
    pub fn row(&self, j: usize) -> Vec<u32> {
        let mut out = vec![0; self.dim];
        for &(k, a) in &self.rows[j] {
            out[k] = a;
        }
        out
    }

    /// Coordinates that appear with nonzero power in some row.
    pub fn used_coordinates(&self) -> Vec<usize> {
        let mut used = vec![false; self.dim];
        for row in &self.rows {
            for &(k, _) in row {
                used[k] = true;
            }
        }
        (0..self.dim).filter(|&k| used[k]).collect()
    }
}

/// Enumerates the total-degree-`q` basis in `d` dimensions, optionally
/// restricted to the coordinates in `subset`.
pub fn enumerate_exponents(
    d: usize,
    q: usize,
    subset: Option<&SubsetSpec>,
    max_rows: usize,
) -> Result<ExponentMatrix> {
    if d == 0 || q == 0 {
        return Err(Error::invalid("basis needs d >= 1 and Q >= 1"));
    }
    let coords: Vec<usize> = match subset {
        Some(s) => {
            if let Some(&k) = s.indices().iter().find(|&&k| k >= d) {
                return Err(Error::invalid(format!("subset index {k} out of range for d = {d}")));
            }
            s.indices().to_vec()
        }
        None => (0..d).collect(),
    };
    let m = coords.len();
    let size = basis_size(m, q).unwrap_or(u128::MAX);
    if size > max_rows as u128 {
        return Err(Error::BasisTooLarge { rows: size, cap: max_rows });
    }
    let mut rows = Vec::with_capacity(size as usize);
    let mut current = Vec::with_capacity(q);
    for total in 1..=q as u32 {
        fill(&coords, 0, total, &mut current, &mut rows);
    }
    debug_assert_eq!(rows.len() as u128, size);
    Ok(ExponentMatrix { rows, degree: q, dim: d })
}

fn fill(
    coords: &[usize],
    pos: usize,
    remaining: u32,
    current: &mut Vec<(usize, u32)>,
    out: &mut Vec<Vec<(usize, u32)>>,
) {
    if remaining == 0 {
        out.push(current.clone());
        return;
    }
    if pos == coords.len() {
        return;
    }
    if pos + 1 == coords.len() {
        current.push((coords[pos], remaining));
        out.push(current.clone());
        current.pop();
        return;
    }
    for a in (0..=remaining).rev() {
        if a > 0 {
            current.push((coords[pos], a));
        }
        fill(coords, pos + 1, remaining - a, current, out);
        if a > 0 {
            current.pop();
        }
    }
}

fn powers(theta: &[f64], q: usize) -> Vec<f64> {
    let mut p = vec![1.0; theta.len() * (q + 1)];
    for (k, &t) in theta.iter().enumerate() {
        for e in 1..=q {
            p[k * (q + 1) + e] = p[k * (q + 1) + e - 1] * t;
        }
    }
    p
}

#[inline]
fn covariate(row: &[(usize, u32)], pow: &[f64], stride: usize, grad: impl Fn(usize) -> f64) -> f64 {
    let mut total = 0.0;
    for (pos, &(k, a)) in row.iter().enumerate() {
        let a_us = a as usize;
        let base = k * stride;
        // a ≥ 1, so the lowered powers below are never negative.
        let mut term = pow[base + a_us - 1] * grad(k);
        if a >= 2 {
            term += (a - 1) as f64 * pow[base + a_us - 2];
        }
        let mut rest = a as f64;
        for (other, &(z, b)) in row.iter().enumerate() {
            if other != pos {
                rest *= pow[z * stride + b as usize];
            }
        }
        total += rest * term;
    }
    total
}

/// Stein-operator image `x[j] = L P_j(θ)` of every basis monomial at one point.
pub fn stein_covariates(a: &ExponentMatrix, theta: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
    if theta.len() != a.dim || grad.len() != a.dim {
        return Err(Error::invalid("stein_covariates: dimension mismatch"));
    }
    let used = a.used_coordinates();
    if theta.iter().any(|v| !v.is_finite()) || used.iter().any(|&k| !grad[k].is_finite()) {
        return Err(Error::invalid("stein_covariates: non-finite input"));
    }
    let pow = powers(theta, a.degree);
    let stride = a.degree + 1;
    Ok(a.rows
        .iter()
        .map(|row| covariate(row, &pow, stride, |k| grad[k]))
        .collect())
}

/// `N × J` matrix whose row `i` is [`stein_covariates`] at sample `i`.
///
/// Only gradient columns of coordinates used by the basis are read.
pub fn build_design_matrix(s: &SampleSet, a: &ExponentMatrix) -> Result<DMatrix<f64>> {
    if s.dim() != a.dim {
        return Err(Error::invalid(format!(
            "basis is {}-dimensional, samples are {}-dimensional",
            a.dim,
            s.dim()
        )));
    }
    for k in a.used_coordinates() {
        if !s.has_gradient(k) {
            return Err(Error::invalid(format!(
                "basis uses coordinate {k} but its gradient is unavailable"
            )));
        }
    }
    let (n, d) = (s.count(), s.dim());
    let q = a.degree;
    let stride = q + 1;
    let theta = s.theta();
    let grad = s.grad_log_target();
    // pow[i][k * stride + e] = θ_i[k]^e
    let pow: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| powers(&(0..d).map(|k| theta[(i, k)]).collect::<Vec<_>>(), q))
        .collect();
    let mut x = DMatrix::<f64>::zeros(n, a.len());
    x.as_mut_slice()
        .par_chunks_mut(n.max(1))
        .zip(a.rows.par_iter())
        .for_each(|(col, row)| {
            for (i, out) in col.iter_mut().enumerate() {
                *out = covariate(row, &pow[i], stride, |k| grad[(i, k)]);
            }
        });
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::uniform_weights;
    use proptest::prelude::*;
    use rand::Rng;

    fn full(d: usize, q: usize) -> ExponentMatrix {
        enumerate_exponents(d, q, None, DEFAULT_MAX_ROWS).unwrap()
    }

    #[test]
    fn two_by_two_rows_in_order() {
        let a = full(2, 2);
        let rows: Vec<Vec<u32>> = (0..a.len()).map(|j| a.row(j)).collect();
        assert_eq!(rows, vec![vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn counts_from_the_examples() {
        // Published counts include the intercept.
        assert_eq!(full(11, 1).n_coefficients(), 12);
        assert_eq!(full(11, 2).n_coefficients(), 78);
        assert_eq!(full(11, 3).n_coefficients(), 364);
        assert_eq!(full(11, 4).n_coefficients(), 1365);
        assert_eq!(full(61, 2).n_coefficients(), 1953);
        assert_eq!(full(11, 3).len(), 363);
        assert_eq!(basis_size(61, 3), Some(41_663));
        assert_eq!(basis_size(61, 4), Some(677_039));
    }

    #[test]
    fn counts_match_closed_form_and_rows_are_unique() {
        for d in 1..=8 {
            for q in 1..=4 {
                let a = full(d, q);
                assert_eq!(a.len() as u128, basis_size(d, q).unwrap());
                let mut rows: Vec<Vec<u32>> = (0..a.len()).map(|j| a.row(j)).collect();
                for r in &rows {
                    let t: u32 = r.iter().sum();
                    assert!(t >= 1 && t as usize <= q);
                }
                rows.sort();
                rows.dedup();
                assert_eq!(rows.len(), a.len());
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let err = enumerate_exponents(61, 4, None, 100_000).unwrap_err();
        assert!(matches!(err, Error::BasisTooLarge { rows: 677_039, .. }));
    }

    #[test]
    fn subset_restricts_support() {
        let s = SubsetSpec::new(vec![3, 1], 5).unwrap();
        let a = enumerate_exponents(5, 3, Some(&s), DEFAULT_MAX_ROWS).unwrap();
        assert_eq!(a.len(), 9);
        assert_eq!(a.used_coordinates(), vec![1, 3]);
        assert!(SubsetSpec::new(vec![], 3).is_err());
        assert!(SubsetSpec::new(vec![3], 3).is_err());
    }

    #[test]
    fn first_order_covariates_are_the_gradient() {
        let a = full(4, 1);
        let g = [0.3, -1.0, 2.5, 0.0];
        assert_eq!(stein_covariates(&a, &[1.0, 2.0, -3.0, 0.5], &g).unwrap(), g.to_vec());
    }

    #[test]
    fn square_under_standard_normal() {
        let a = enumerate_exponents(1, 2, None, 10).unwrap();
        let x = stein_covariates(&a, &[2.0], &[-2.0]).unwrap();
        assert_eq!(x[1], -6.0);
    }

    #[test]
    fn laplacian_only_at_origin() {
        let a = full(2, 2);
        let x = stein_covariates(&a, &[0.0, 0.0], &[1.0, -1.0]).unwrap();
        assert_eq!(x[2], 2.0);
        assert_eq!(x[3], 0.0);
    }

    #[test]
    fn gaussian_first_order_design() {
        let (mu, sd) = (1.5, 0.7);
        let th = [0.2, 1.5, 3.1];
        let theta = DMatrix::from_column_slice(3, 1, &th);
        let grad = theta.map(|t| -(t - mu) / (sd * sd));
        let s = SampleSet::uniform(theta, grad).unwrap();
        let x = build_design_matrix(&s, &full(1, 1)).unwrap();
        for (i, t) in th.iter().enumerate() {
            assert!((x[(i, 0)] + (t - mu) / (sd * sd)).abs() < 1e-15);
        }
        let zero = SampleSet::uniform(s.theta().clone(), DMatrix::zeros(3, 1)).unwrap();
        assert!(build_design_matrix(&zero, &full(1, 1)).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn design_rows_match_pointwise_covariates() {
        let mut rng = crate::rng::stream(1, &[]);
        let (n, d) = (7, 3);
        let theta = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let grad = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let s = SampleSet::new(theta.clone(), grad.clone(), uniform_weights(n)).unwrap();
        let a = full(d, 3);
        let x = build_design_matrix(&s, &a).unwrap();
        for i in 0..n {
            let th: Vec<f64> = theta.row(i).iter().copied().collect();
            let g: Vec<f64> = grad.row(i).iter().copied().collect();
            let row = stein_covariates(&a, &th, &g).unwrap();
            for j in 0..a.len() {
                assert_eq!(x[(i, j)], row[j]);
            }
        }
    }

    #[test]
    fn masked_gradients_are_never_read() {
        let theta = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let g = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let s = SampleSet::with_partial_gradients(theta, &g, &[1], uniform_weights(2)).unwrap();
        let sub = SubsetSpec::new(vec![1], 3).unwrap();
        let a = enumerate_exponents(3, 2, Some(&sub), 100).unwrap();
        let x = build_design_matrix(&s, &a).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
        assert!(build_design_matrix(&s, &full(3, 1)).is_err());
    }

    /// `Δg + ∇g·u` for the monomial by central differences.
    fn fd_stein(exps: &[u32], theta: &[f64], grad: &[f64]) -> f64 {
        let g = |t: &[f64]| -> f64 { t.iter().zip(exps).map(|(v, &a)| v.powi(a as i32)).product() };
        let h = 1e-4;
        let g0 = g(theta);
        let mut out = 0.0;
        for k in 0..theta.len() {
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[k] += h;
            dn[k] -= h;
            let (gu, gd) = (g(&up), g(&dn));
            out += (gu - 2.0 * g0 + gd) / (h * h) + (gu - gd) / (2.0 * h) * grad[k];
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn matches_finite_difference_stein_oracle(
            d in 1usize..=3,
            q in 1usize..=4,
            seed in any::<u64>(),
        ) {
            let mut rng = crate::rng::stream(seed, &[]);
            let theta: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..1.7) * if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let grad: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = full(d, q);
            let x = stein_covariates(&a, &theta, &grad).unwrap();
            for j in 0..a.len() {
                let fd = fd_stein(&a.row(j), &theta, &grad);
                let tol = 1e-4 * fd.abs().max(1.0);
                prop_assert!((x[j] - fd).abs() <= tol, "row {:?}: {} vs {}", a.row(j), x[j], fd);
            }
        }
    }
}
