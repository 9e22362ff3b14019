//! Plain Lasso by cyclic coordinate descent, with squared-error CV.

use rayon::prelude::*;

use crate::data::{Dataset, ModelParams};
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;
use crate::selection::{argmin_first, fold_assignment, lambda_grid, training_rows, CvConfig, CvReport, FoldDiagnostic};
use crate::solver::{soft_threshold, FitResult};

/// `½n⁻¹Σ(yᵢ − β0 − xᵢᵀβ)² + λ‖β‖₁`.
pub fn lasso_objective(data: &Dataset, params: &ModelParams, lambda: f64) -> f64 {
    let r = params.residuals(data);
    0.5 * compensated_sum(r.iter().map(|v| v * v)) / data.n() as f64 + lambda * params.l1_norm()
}

struct LassoCd<'a> {
    data: &'a Dataset,
    inv_n: f64,
    norms: Vec<f64>,
    resid: Vec<f64>,
}

impl<'a> LassoCd<'a> {
    fn new(data: &'a Dataset, params: &ModelParams) -> Self {
        let n = data.n();
        let inv_n = 1.0 / n as f64;
        let xs = data.x().as_slice();
        let norms = (0..data.p()).map(|j| xs[j * n..(j + 1) * n].iter().map(|v| v * v).sum::<f64>() * inv_n).collect();
        LassoCd { data, inv_n, norms, resid: params.residuals(data).as_slice().to_vec() }
    }

    fn sweep(&mut self, params: &mut ModelParams, lambda: f64, coords: impl Iterator<Item = usize>) -> f64 {
        let n = self.data.n();
        let shift = self.resid.iter().sum::<f64>() * self.inv_n;
        params.beta0 += shift;
        for r in &mut self.resid {
            *r -= shift;
        }
        let mut change = shift.abs();
        let xs = self.data.x().as_slice();
        for j in coords {
            let xj = &xs[j * n..(j + 1) * n];
            let old = params.beta[j];
            let new = if self.norms[j] > 0.0 {
                let g = xj.iter().zip(&self.resid).map(|(x, r)| x * r).sum::<f64>() * self.inv_n;
                soft_threshold(g + self.norms[j] * old, lambda) / self.norms[j]
            } else {
                0.0
            };
            let d = new - old;
            if d != 0.0 {
                params.beta[j] = new;
                for (r, x) in self.resid.iter_mut().zip(xj) {
                    *r -= x * d;
                }
            }
            change = change.max(d.abs());
        }
        change
    }
}

/// One Lasso coordinate pass (intercept, then βⱼ ascending).
pub fn lasso_sweep(data: &Dataset, params: &ModelParams, lambda: f64) -> ModelParams {
    let mut out = params.clone();
    LassoCd::new(data, params).sweep(&mut out, lambda, 0..data.p());
    out
}

/// Largest Lasso KKT slack: `|gⱼ + λ sign βⱼ|` or `max(|gⱼ| − λ, 0)` with
/// `gⱼ = −n⁻¹Σᵢrᵢxᵢⱼ`, and `|n⁻¹Σᵢrᵢ|` for the intercept.
pub fn lasso_kkt(data: &Dataset, params: &ModelParams, lambda: f64) -> f64 {
    let n = data.n() as f64;
    let r = params.residuals(data);
    let mut worst = (compensated_sum(r.iter().copied()) / n).abs();
    for j in 0..data.p() {
        let g = -compensated_sum(data.x().column(j).iter().zip(r.iter()).map(|(x, ri)| x * ri)) / n;
        let b = params.beta[j];
        worst = worst.max(if b != 0.0 { (g + lambda * b.signum()).abs() } else { (g.abs() - lambda).max(0.0) });
    }
    worst
}

/// Lasso from a warm start. σ² of the result is the mean squared residual.
pub fn lasso_fit_from(
    data: &Dataset,
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
    start: &ModelParams,
) -> Result<FitResult> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if !(tol > 0.0) || max_sweeps == 0 {
        return Err(Error::Config("tolerance must be positive and max_sweeps at least 1".into()));
    }
    let p = data.p();
    let mut params = start.clone();
    let mut cd = LassoCd::new(data, &params);
    let mut trajectory = vec![lasso_objective(data, &params, lambda)];
    let mut in_active: Vec<bool> = params.beta.iter().map(|b| *b != 0.0).collect();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        let active: Vec<usize> = (0..p).filter(|&j| in_active[j]).collect();
        while sweeps < max_sweeps {
            sweeps += 1;
            let change = cd.sweep(&mut params, lambda, active.iter().copied());
            trajectory.push(lasso_objective(data, &params, lambda));
            if change <= tol {
                break;
            }
        }
        sweeps += 1;
        let change = cd.sweep(&mut params, lambda, 0..p);
        trajectory.push(lasso_objective(data, &params, lambda));
        let mut grew = false;
        for (active, b) in in_active.iter_mut().zip(params.beta.iter()) {
            if !*active && *b != 0.0 {
                *active = true;
                grew = true;
            }
        }
        if !grew && change <= tol {
            converged = true;
            break;
        }
    }
    let r = params.residuals(data);
    let mse = compensated_sum(r.iter().map(|v| v * v)) / data.n() as f64;
    params.sigma2 = mse.max(crate::model::SIGMA2_VALID_FLOOR);
    Ok(FitResult {
        kkt_violation: lasso_kkt(data, &params, lambda),
        active_set: params.active_set(),
        params,
        loss_trajectory: trajectory,
        mm_iterations: sweeps,
        converged,
        degenerate: false,
        zero_weight_columns: Vec::new(),
    })
}

/// Lasso from β = 0, β0 = 0.
pub fn lasso_fit(data: &Dataset, lambda: f64, tol: f64, max_sweeps: usize) -> Result<FitResult> {
    lasso_fit_from(data, lambda, tol, max_sweeps, &ModelParams::zeros(data.p(), 0.0, 1.0))
}

/// `maxⱼ |n⁻¹ Σᵢ xᵢⱼ(yᵢ − ȳ)|`, the smallest λ with an all-zero Lasso fit.
pub fn lasso_lambda_max(data: &Dataset) -> f64 {
    let n = data.n() as f64;
    let ybar = compensated_sum(data.y().iter().copied()) / n;
    (0..data.p())
        .map(|j| compensated_sum(data.x().column(j).iter().zip(data.y().iter()).map(|(x, y)| x * (y - ybar))).abs() / n)
        .fold(0.0, f64::max)
}

/// Default Lasso tolerances.
pub const LASSO_TOL: f64 = 1e-9;
pub const LASSO_MAX_SWEEPS: usize = 100_000;

/// K-fold CV of the Lasso on mean squared prediction error. With `grid` of
/// `None` the grid spans `[floor·λmax, λmax]` per `cv`. Paths are warm
/// started down the grid.
pub fn lasso_cv(data: &Dataset, cv: &CvConfig, grid: Option<Vec<f64>>) -> Result<CvReport> {
    cv.validate(data.n())?;
    let data = data.select_rows(&data.canonical_row_order())?;
    let grid = match grid {
        Some(g) if !g.is_empty() => g,
        Some(_) => return Err(Error::Config("empty λ grid".into())),
        None => lambda_grid(lasso_lambda_max(&data).max(f64::MIN_POSITIVE), cv)?,
    };
    let n = data.n();
    let k = cv.folds.count(n);
    let labels = fold_assignment(&data, cv.folds, cv.seed);
    let subsets: Vec<Dataset> = (0..k).map(|f| data.select_rows(&training_rows(&labels, f))).collect::<Result<_>>()?;
    let paths: Vec<Vec<Result<FitResult>>> = (0..=k)
        .into_par_iter()
        .map(|t| {
            let d = if t == 0 { &data } else { &subsets[t - 1] };
            let mut start = ModelParams::zeros(d.p(), 0.0, 1.0);
            grid.iter()
                .map(|&l| {
                    let res = lasso_fit_from(d, l, LASSO_TOL, LASSO_MAX_SWEEPS, &start);
                    if let Ok(r) = &res {
                        start = r.params.clone();
                    }
                    res
                })
                .collect()
        })
        .collect();

    let m = grid.len();
    let mut scores = vec![f64::NAN; m];
    let mut excluded = vec![None; m];
    let mut fold_diagnostics = Vec::with_capacity(m);
    let mut path = Vec::with_capacity(m);
    for li in 0..m {
        let diags: Vec<FoldDiagnostic> = (0..k)
            .map(|f| match &paths[f + 1][li] {
                Ok(r) => FoldDiagnostic {
                    fold: f,
                    converged: r.converged,
                    mm_iterations: r.mm_iterations,
                    kkt_violation: r.kkt_violation,
                    final_loss: r.final_loss(),
                    nonzero: r.active_set.len(),
                    error: None,
                },
                Err(e) => FoldDiagnostic {
                    fold: f,
                    converged: false,
                    mm_iterations: 0,
                    kkt_violation: f64::NAN,
                    final_loss: f64::NAN,
                    nonzero: 0,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        path.push(paths[0][li].as_ref().ok().map(|r| r.params.clone()));
        if diags.iter().any(|d| d.error.is_some()) || paths[0][li].is_err() {
            excluded[li] = Some("fit failed".into());
        } else {
            let sq: Vec<f64> = (0..n)
                .map(|i| {
                    let fit = paths[labels[i] + 1][li].as_ref().expect("checked above");
                    let e = data.y()[i] - fit.params.predict_row(&data, i);
                    e * e
                })
                .collect();
            scores[li] = compensated_sum(sq) / n as f64;
        }
        fold_diagnostics.push(diags);
    }
    let best_index = argmin_first(&scores, &excluded).ok_or_else(|| Error::degenerate("every Lasso fit failed"))?;
    let final_fit = paths[0][best_index].as_ref().expect("best λ has a full fit").clone();
    Ok(CvReport {
        best_lambda: grid[best_index],
        lambda_grid: grid,
        scores,
        excluded,
        best_index,
        fold_diagnostics,
        path,
        final_fit,
    })
}
