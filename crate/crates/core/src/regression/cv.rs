use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::solvers::{LassoProblem, RidgeSolver};
use super::{assemble, fit_prepared, prepare, FitOptions, Penalty, RegressionFit};
use crate::error::{Error, Result};
use crate::rng;
use crate::samples::Standardised;

/// Settings for k-fold selection of the penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    /// Strictly descending positive values; `None` builds the default grid.
    pub lambda_grid: Option<Vec<f64>>,
    pub seed: u64,
    /// Grid values whose CV error is within `tolerance·var(f)` of the
    /// minimum count as ties; the largest tied λ wins.
    pub tolerance: f64,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub fit: FitOptions,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            lambda_grid: None,
            seed: 0,
            tolerance: 1e-14,
            n_lambda: 100,
            lambda_min_ratio: 1e-4,
            fit: FitOptions::default(),
        }
    }
}

/// Smallest LASSO penalty with an all-zero solution, `max_j |Σ w x_j f|`,
/// on the prepared scale. Ridge uses a thousand times this as its grid top.
pub fn lambda_max(x: &DMatrix<f64>, f: &DVector<f64>, w: &[f64], method: Penalty) -> f64 {
    let m = (0..x.ncols())
        .map(|j| {
            x.column(j)
                .iter()
                .zip(f.iter())
                .zip(w)
                .map(|((a, b), wi)| wi * a * b)
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max);
    match method {
        Penalty::Ridge => 1e3 * m,
        _ => m,
    }
}

/// `n` values log-spaced from `top` down to `top·ratio`.
pub fn default_lambda_grid(top: f64, n: usize, ratio: f64) -> Vec<f64> {
    let top = if top > 0.0 && top.is_finite() { top } else { 1.0 };
    if n <= 1 {
        return vec![top];
    }
    let step = ratio.ln() / (n - 1) as f64;
    (0..n).map(|i| top * (step * i as f64).exp()).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("empty penalty grid"));
    }
    if grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::invalid("penalty grid values must be positive and finite"));
    }
    if grid.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::invalid("penalty grid must be strictly descending"));
    }
    Ok(())
}

/// Fits along the whole grid on prepared data.
fn path(st: &Standardised, w: &[f64], method: Penalty, grid: &[f64], opts: &FitOptions) -> Result<Vec<RegressionFit>> {
    if st.x.ncols() == 0 {
        return grid.iter().map(|&l| fit_prepared(st, w, method, l, opts)).collect();
    }
    match method {
        Penalty::Ridge => {
            let solver = RidgeSolver::new(&st.x, &st.f, w);
            Ok(grid
                .iter()
                .map(|&l| assemble(st, &solver.solve(l), method, l, false, 0))
                .collect())
        }
        Penalty::Lasso => {
            let problem = LassoProblem::new(&st.x, &st.f, w);
            let mut warm: Option<Vec<f64>> = None;
            let mut out = Vec::with_capacity(grid.len());
            for &l in grid {
                let r = problem.solve(l, warm.as_deref(), &opts.lasso)?;
                let fit = if opts.lasso.relaxed {
                    fit_prepared(st, w, method, l, opts)?
                } else {
                    assemble(st, &r.coef, method, l, false, r.sweeps)
                };
                warm = Some(r.coef);
                out.push(fit);
            }
            Ok(out)
        }
        Penalty::Ols => Err(Error::invalid("cross-validation needs a penalised method")),
    }
}

/// Chooses λ by k-fold cross-validation of the held-out weighted MSE and
/// refits on all rows at the chosen value.
pub fn cv_lambda(
    x: &DMatrix<f64>,
    f: &[f64],
    w: &[f64],
    method: Penalty,
    cfg: &CvConfig,
) -> Result<(f64, RegressionFit)> {
    let n = x.nrows();
    if cfg.folds < 2 {
        return Err(Error::invalid("need at least two folds"));
    }
    if n < cfg.folds {
        return Err(Error::InsufficientSamples { needed: cfg.folds, got: n });
    }
    if method == Penalty::Ols {
        return Err(Error::invalid("cross-validation needs a penalised method"));
    }
    let (full, wn) = prepare(x, f, w, cfg.fit.scaling)?;
    let grid = match &cfg.lambda_grid {
        Some(g) => g.clone(),
        None => default_lambda_grid(
            lambda_max(&full.x, &full.f, &wn, method),
            cfg.n_lambda,
            cfg.lambda_min_ratio,
        ),
    };
    check_grid(&grid)?;

    let perm = rng::permutation(n, cfg.seed, &[0x6376_5f66_6f6c_6473]);
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold_of[i] = pos % cfg.folds;
    }

    let fold_errors: Vec<Option<Vec<f64>>> = (0..cfg.folds)
        .into_par_iter()
        .map(|k| -> Result<Option<Vec<f64>>> {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != k).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == k).collect();
            let w_test: f64 = test.iter().map(|&i| wn[i]).sum();
            let w_train: f64 = train.iter().map(|&i| wn[i]).sum();
            if !(w_test > 0.0) || !(w_train > 0.0) || train.len() < 2 {
                return Ok(None);
            }
            let xt = x.select_rows(&train);
            let ft: Vec<f64> = train.iter().map(|&i| f[i]).collect();
            let wt: Vec<f64> = train.iter().map(|&i| wn[i]).collect();
            let (st, wt) = match prepare(&xt, &ft, &wt, cfg.fit.scaling) {
                Ok(p) => p,
                Err(Error::InsufficientSamples { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let fits = path(&st, &wt, method, &grid, &cfg.fit)?;
            Ok(Some(
                fits.iter()
                    .map(|fit| {
                        test.iter()
                            .map(|&i| {
                                let r = f[i] - fit.predict_row(x.row(i).iter().copied());
                                wn[i] * r * r
                            })
                            .sum::<f64>()
                            / w_test
                    })
                    .collect(),
            ))
        })
        .collect::<Result<_>>()?;

    let used: Vec<&Vec<f64>> = fold_errors.iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::invalid("no fold has positive held-out and training weight"));
    }
    let cv: Vec<f64> = (0..grid.len())
        .map(|g| used.iter().map(|e| e[g]).sum::<f64>() / used.len() as f64)
        .collect();
    let min = cv.iter().copied().fold(f64::INFINITY, f64::min);
    let var_f = {
        let m: f64 = f.iter().zip(&wn).map(|(a, b)| a * b).sum();
        f.iter().zip(&wn).map(|(a, b)| b * (a - m) * (a - m)).sum::<f64>()
    };
    let thresh = min + cfg.tolerance * var_f.max(f64::MIN_POSITIVE);
    // Grid is descending, so the first tied entry is the largest λ.
    let best = cv.iter().position(|&c| c <= thresh).unwrap_or(0);
    let lambda = grid[best];
    let mut fit = fit_prepared(&full, &wn, method, lambda, &cfg.fit)?;
    fit.cv_mse = Some(cv[best]);
    Ok((lambda, fit))
}
