use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// `sign(z)·max(|z| − t, 0)`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn sqrt_weighted(x: &DMatrix<f64>, f: &DVector<f64>, w: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let mut xw = x.clone();
    let mut fw = f.clone();
    for (i, wi) in w.iter().enumerate() {
        let s = wi.sqrt();
        xw.row_mut(i).scale_mut(s);
        fw[i] *= s;
    }
    (xw, fw)
}

fn rank_tol(smax: f64, n: usize, j: usize) -> f64 {
    smax * (n.max(j) as f64) * f64::EPSILON
}

/// Minimum-norm solution of the weighted least-squares problem by SVD.
/// Returns the coefficients and the numerical rank.
pub(crate) fn weighted_min_norm_lstsq(x: &DMatrix<f64>, f: &DVector<f64>, w: &[f64]) -> (Vec<f64>, usize) {
    let (xw, fw) = sqrt_weighted(x, f, w);
    let (n, j) = xw.shape();
    let svd = xw.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = rank_tol(smax, n, j);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let coef = svd
        .solve(&fw, tol)
        .expect("both singular-vector sets were computed");
    (coef.iter().copied().collect(), rank)
}

/// Ridge by a direct solve: primal Cholesky when `J ≤ N`, dual otherwise.
pub(crate) fn ridge_direct(x: &DMatrix<f64>, f: &DVector<f64>, w: &[f64], lambda: f64) -> Vec<f64> {
    let (xw, fw) = sqrt_weighted(x, f, w);
    let (n, j) = xw.shape();
    let solved = if j <= n {
        let mut g = xw.tr_mul(&xw);
        for k in 0..j {
            g[(k, k)] += lambda;
        }
        let b = xw.tr_mul(&fw);
        g.cholesky().map(|c| c.solve(&b))
    } else {
        let mut k = &xw * xw.transpose();
        for i in 0..n {
            k[(i, i)] += lambda;
        }
        k.cholesky().map(|c| xw.tr_mul(&c.solve(&fw)))
    };
    match solved {
        Some(b) => b.iter().copied().collect(),
        None => RidgeSolver::new(x, f, w).solve(lambda),
    }
}

/// Ridge solutions along a path of penalties from one eigendecomposition.
pub struct RidgeSolver {
    eigvals: DVector<f64>,
    /// Primal: eigenvectors of `XᵀWX` and the projection of `XᵀWf`.
    /// Dual: eigenvectors of `W½XXᵀW½`, projected `W½f`, and `W½X`.
    vecs: DMatrix<f64>,
    proj: DVector<f64>,
    xw: Option<DMatrix<f64>>,
    tol: f64,
}

impl RidgeSolver {
    pub fn new(x: &DMatrix<f64>, f: &DVector<f64>, w: &[f64]) -> Self {
        let (xw, fw) = sqrt_weighted(x, f, w);
        let (n, j) = xw.shape();
        if j <= n {
            let eig = SymmetricEigen::new(xw.tr_mul(&xw));
            let proj = eig.eigenvectors.tr_mul(&xw.tr_mul(&fw));
            let tol = rank_tol(eig.eigenvalues.amax(), n, j);
            RidgeSolver { eigvals: eig.eigenvalues, vecs: eig.eigenvectors, proj, xw: None, tol }
        } else {
            let eig = SymmetricEigen::new(&xw * xw.transpose());
            let proj = eig.eigenvectors.tr_mul(&fw);
            let tol = rank_tol(eig.eigenvalues.amax(), n, j);
            RidgeSolver { eigvals: eig.eigenvalues, vecs: eig.eigenvectors, proj, xw: Some(xw), tol }
        }
    }

    /// Coefficients at `lambda`; `lambda = 0` gives the minimum-norm least
    /// squares solution.
    pub fn solve(&self, lambda: f64) -> Vec<f64> {
        let scaled = DVector::from_iterator(
            self.eigvals.len(),
            self.eigvals.iter().zip(self.proj.iter()).map(|(&e, &p)| {
                let e = e.max(0.0);
                if lambda == 0.0 && e <= self.tol {
                    0.0
                } else {
                    p / (e + lambda)
                }
            }),
        );
        let v = &self.vecs * scaled;
        let coef = match &self.xw {
            None => v,
            Some(xw) => xw.tr_mul(&v),
        };
        coef.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoOptions {
    /// Convergence threshold on `max_j |Δγ_j|·√(Σ w x_j²)`.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Refit OLS on the selected support.
    pub relaxed: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions { tol: 1e-7, max_sweeps: 100_000, relaxed: false }
    }
}

#[derive(Debug, Clone)]
pub struct LassoOutput {
    pub coef: Vec<f64>,
    pub sweeps: usize,
}

/// A weighted LASSO problem prepared for repeated solves along a path.
///
/// With more rows than columns the solver works on the Gram matrix
/// `XᵀWX` and keeps the gradient `XᵀW r` up to date, so an update costs
/// `O(J)` rather than `O(N)`.
pub(crate) struct LassoProblem<'a> {
    x: &'a DMatrix<f64>,
    f: &'a DVector<f64>,
    w: &'a [f64],
    v: Vec<f64>,
    gram: Option<(DMatrix<f64>, Vec<f64>, f64)>,
}

impl<'a> LassoProblem<'a> {
    pub(crate) fn new(x: &'a DMatrix<f64>, f: &'a DVector<f64>, w: &'a [f64]) -> Self {
        let (n, j) = x.shape();
        let v = (0..j)
            .map(|k| x.column(k).iter().zip(w).map(|(a, wi)| wi * a * a).sum())
            .collect();
        let gram = (n > j).then(|| {
            let mut xw = x.clone();
            for (i, wi) in w.iter().enumerate() {
                xw.row_mut(i).scale_mut(*wi);
            }
            let g = xw.tr_mul(x);
            let c: Vec<f64> = xw.tr_mul(f).iter().copied().collect();
            let fwf: f64 = f.iter().zip(w).map(|(a, wi)| wi * a * a).sum();
            (g, c, fwf)
        });
        LassoProblem { x, f, w, v, gram }
    }

    pub(crate) fn solve(&self, lambda: f64, warm: Option<&[f64]>, opts: &LassoOptions) -> Result<LassoOutput> {
        let j = self.x.ncols();
        let coef = match warm {
            Some(c) if c.len() == j => c.to_vec(),
            _ => vec![0.0; j],
        };
        match &self.gram {
            Some((g, c, fwf)) => {
                // grad = XᵀW r = c − G·coef
                let gc = g * DVector::from_column_slice(&coef);
                let grad: Vec<f64> = c.iter().zip(gc.iter()).map(|(a, b)| a - b).collect();
                let mut st = GramState { g, c, fwf: *fwf, grad, v: &self.v };
                descend(&mut st, coef, lambda, opts)
            }
            None => {
                let mut r: Vec<f64> = self.f.iter().copied().collect();
                for (k, &c) in coef.iter().enumerate() {
                    if c != 0.0 {
                        for (ri, xi) in r.iter_mut().zip(self.x.column(k).iter()) {
                            *ri -= c * xi;
                        }
                    }
                }
                let mut st = ResidualState { x: self.x, w: self.w, r, v: &self.v };
                descend(&mut st, coef, lambda, opts)
            }
        }
    }
}

trait CdState {
    /// `Σ w x_k r` at the current coefficients.
    fn partial(&self, k: usize) -> f64;
    fn shift(&mut self, k: usize, d: f64);
    fn v(&self, k: usize) -> f64;
    /// `½ Σ w r²`.
    fn half_rss(&self, coef: &[f64]) -> f64;
}

struct ResidualState<'a> {
    x: &'a DMatrix<f64>,
    w: &'a [f64],
    r: Vec<f64>,
    v: &'a [f64],
}

impl CdState for ResidualState<'_> {
    fn partial(&self, k: usize) -> f64 {
        self.x.column(k).iter().zip(&self.r).zip(self.w).map(|((a, ri), wi)| wi * a * ri).sum()
    }
    fn shift(&mut self, k: usize, d: f64) {
        for (ri, a) in self.r.iter_mut().zip(self.x.column(k).iter()) {
            *ri -= d * a;
        }
    }
    fn v(&self, k: usize) -> f64 {
        self.v[k]
    }
    fn half_rss(&self, _coef: &[f64]) -> f64 {
        0.5 * self.r.iter().zip(self.w).map(|(ri, wi)| wi * ri * ri).sum::<f64>()
    }
}

struct GramState<'a> {
    g: &'a DMatrix<f64>,
    c: &'a [f64],
    fwf: f64,
    grad: Vec<f64>,
    v: &'a [f64],
}

impl CdState for GramState<'_> {
    fn partial(&self, k: usize) -> f64 {
        self.grad[k]
    }
    fn shift(&mut self, k: usize, d: f64) {
        for (gi, a) in self.grad.iter_mut().zip(self.g.column(k).iter()) {
            *gi -= d * a;
        }
    }
    fn v(&self, k: usize) -> f64 {
        self.v[k]
    }
    fn half_rss(&self, coef: &[f64]) -> f64 {
        // rᵀWr = fᵀWf − cᵀb − bᵀ(XᵀW r)
        let cb: f64 = self.c.iter().zip(coef).map(|(a, b)| a * b).sum();
        let bg: f64 = coef.iter().zip(&self.grad).map(|(a, b)| a * b).sum();
        0.5 * (self.fwf - cb - bg)
    }
}

fn lasso_objective(st: &impl CdState, coef: &[f64], lambda: f64) -> f64 {
    st.half_rss(coef) + lambda * coef.iter().map(|c| c.abs()).sum::<f64>()
}

fn cd_step(st: &mut impl CdState, coef: &mut [f64], k: usize, lambda: f64) -> f64 {
    let v = st.v(k);
    if v <= 0.0 {
        return 0.0;
    }
    let old = coef[k];
    let new = soft_threshold(st.partial(k) + v * old, lambda) / v;
    if new != old {
        st.shift(k, new - old);
        coef[k] = new;
    }
    (new - old).abs() * v.sqrt()
}

/// Minimises `½ Σ w_i r_i² + λ‖γ‖₁` by cyclic coordinate descent, with an
/// active-set inner loop after each full sweep. `x` and `f` are used as
/// given (no centring).
pub fn lasso_coordinate_descent(
    x: &DMatrix<f64>,
    f: &DVector<f64>,
    w: &[f64],
    lambda: f64,
    warm: Option<&[f64]>,
    opts: &LassoOptions,
) -> Result<LassoOutput> {
    LassoProblem::new(x, f, w).solve(lambda, warm, opts)
}

fn descend(st: &mut impl CdState, mut coef: Vec<f64>, lambda: f64, opts: &LassoOptions) -> Result<LassoOutput> {
    let j = coef.len();
    let mut sweeps = 0;
    let mut last_obj = lasso_objective(st, &coef, lambda);
    let mut max_change = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        // Full sweep over all coordinates.
        sweeps += 1;
        max_change = 0.0;
        for k in 0..j {
            max_change = max_change.max(cd_step(st, &mut coef, k, lambda));
        }
        debug_assert!({
            let obj = lasso_objective(st, &coef, lambda);
            let ok = obj <= last_obj + 1e-10 * last_obj.abs().max(1.0);
            last_obj = obj;
            ok
        });
        if max_change < opts.tol {
            return Ok(LassoOutput { coef, sweeps });
        }
        // Iterate on the active set until it settles.
        let active: Vec<usize> = (0..j).filter(|&k| coef[k] != 0.0).collect();
        while sweeps < opts.max_sweeps {
            sweeps += 1;
            let mut change: f64 = 0.0;
            for &k in &active {
                change = change.max(cd_step(st, &mut coef, k, lambda));
            }
            debug_assert!({
                let obj = lasso_objective(st, &coef, lambda);
                let ok = obj <= last_obj + 1e-10 * last_obj.abs().max(1.0);
                last_obj = obj;
                ok
            });
            if change < opts.tol {
                break;
            }
        }
    }
    Err(Error::ConvergenceError { iterations: sweeps, max_change })
}
