//! λ grids and robust cross-validation (RoCV).
//!
//! RoCV scores a held-out point with the coefficients fitted without its
//! fold and the variance fitted on the full data, using the γ₀-cross entropy
//! instead of squared error.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, ModelParams};
use crate::error::{Error, Result};
use crate::model::{log_power_integral, weights_from_scaled_residuals};
use crate::numeric::{compensated_sum, log_mean_exp};
use crate::solver::{fit, FitConfig, FitResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Folds {
    KFold(usize),
    LeaveOneOut,
}

impl Folds {
    pub fn count(&self, n: usize) -> usize {
        match *self {
            Folds::KFold(k) => k,
            Folds::LeaveOneOut => n,
        }
    }
}

/// Where the top of the λ grid comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAnchor {
    /// [`lambda_zero`]: the KKT bound at the self-consistent intercept-only fit.
    Kkt,
    /// [`collapse_lambda`]: the smallest λ at which a fit started from the
    /// initial estimate ends with every coefficient at zero.
    Collapse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub gamma0: f64,
    pub folds: Folds,
    pub grid_size: usize,
    pub grid_floor_ratio: f64,
    pub seed: u64,
    pub anchor: GridAnchor,
    /// Start each fit from the previous λ's solution instead of from `init`.
    pub warm_start: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            gamma0: 0.5,
            folds: Folds::KFold(10),
            grid_size: 50,
            grid_floor_ratio: 0.05,
            seed: 0,
            anchor: GridAnchor::Collapse,
            warm_start: false,
        }
    }
}

impl CvConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(Error::Config(format!("gamma0 must be positive, got {}", self.gamma0)));
        }
        let k = self.folds.count(n);
        if k < 2 || k > n {
            return Err(Error::Config(format!("fold count {k} must lie in [2, {n}]")));
        }
        if self.grid_size < 1 {
            return Err(Error::Config("grid_size must be at least 1".into()));
        }
        if !(self.grid_floor_ratio > 0.0 && self.grid_floor_ratio < 1.0) {
            return Err(Error::Config(format!("grid_floor_ratio must lie in (0, 1), got {}", self.grid_floor_ratio)));
        }
        Ok(())
    }
}

/// Outcome of one (λ, fold) fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldDiagnostic {
    pub fold: usize,
    pub converged: bool,
    pub mm_iterations: usize,
    pub kkt_violation: f64,
    pub final_loss: f64,
    pub nonzero: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    /// Descending.
    pub lambda_grid: Vec<f64>,
    /// CV score per λ; `NaN` where the λ was excluded.
    pub scores: Vec<f64>,
    /// Why a λ was excluded from the argmin, if it was.
    pub excluded: Vec<Option<String>>,
    pub best_index: usize,
    pub best_lambda: f64,
    /// `[λ index][fold]`.
    pub fold_diagnostics: Vec<Vec<FoldDiagnostic>>,
    /// Full-data estimate at each λ, where that fit succeeded.
    pub path: Vec<Option<ModelParams>>,
    /// Full-data fit at `best_lambda`.
    pub final_fit: FitResult,
}

/// Fixed point of the MM iteration for the intercept-and-variance model
/// (β = 0), started at `init.beta0`, `init.sigma2`.
pub fn intercept_only_fit(data: &Dataset, gamma: f64, init: &ModelParams) -> Result<ModelParams> {
    init.validate()?;
    let y = data.y().as_slice();
    let mut beta0 = init.beta0;
    let mut sigma2 = init.sigma2;
    for _ in 0..10_000 {
        let q: Vec<f64> = y.iter().map(|v| (v - beta0) * (v - beta0) / (2.0 * sigma2)).collect();
        let w = weights_from_scaled_residuals(&q, gamma)?;
        let a = w.as_slice();
        let new_beta0 = compensated_sum(a.iter().zip(y).map(|(a, v)| a * v));
        let new_sigma2 =
            (1.0 + gamma) * compensated_sum(a.iter().zip(y).map(|(a, v)| a * (v - new_beta0) * (v - new_beta0)));
        if !(new_sigma2 >= crate::model::SIGMA2_VALID_FLOOR) {
            return Err(Error::degenerate("intercept-only fit collapsed onto the data"));
        }
        let done =
            (new_beta0 - beta0).abs() <= 1e-13 * (1.0 + beta0.abs()) && (new_sigma2 - sigma2).abs() <= 1e-13 * sigma2;
        beta0 = new_beta0;
        sigma2 = new_sigma2;
        if done {
            break;
        }
    }
    Ok(ModelParams { beta0, beta: DVector::zeros(data.p()), sigma2 })
}

/// `λ₀ = maxⱼ |Σᵢ αᵢ(yᵢ − β̂0)xᵢⱼ| / σ̂²` at the intercept-only fixed point:
/// the smallest λ at which β = 0 satisfies the KKT conditions there.
///
/// Rounded up by a relative [`LAMBDA_ZERO_MARGIN`] so that a fit at exactly
/// λ₀ from that fixed point keeps β = 0 in floating point.
pub fn lambda_zero(data: &Dataset, gamma: f64, init: &ModelParams) -> Result<f64> {
    let base = intercept_only_fit(data, gamma, init)?;
    let weights = crate::model::mm_weights(data, &base, gamma)?;
    let a = weights.as_slice();
    let n = data.n();
    let mut best = 0.0f64;
    for j in 0..data.p() {
        let g = compensated_sum((0..n).map(|i| a[i] * (data.y()[i] - base.beta0) * data.x()[(i, j)]));
        best = best.max(g.abs());
    }
    Ok(best / base.sigma2 * (1.0 + LAMBDA_ZERO_MARGIN))
}

/// Covers the convergence tolerance of the intercept-only fixed point and
/// summation-order differences in the gradient.
pub const LAMBDA_ZERO_MARGIN: f64 = 1e-9;

/// Smallest λ (to relative precision 1e-3) at which `fit(data, λ, init)`
/// returns an all-zero coefficient vector. Fits that fail count as nonzero.
pub fn collapse_lambda(data: &Dataset, cfg: &FitConfig, init: &ModelParams) -> Result<f64> {
    let is_zero = |lambda: f64| -> bool {
        fit(data, &cfg.with_lambda(lambda), init).is_ok_and(|r| r.params.beta.iter().all(|b| *b == 0.0))
    };
    let start = lambda_zero(data, cfg.gamma, init)?.max(1e-8);
    let (mut lo, mut hi);
    if is_zero(start) {
        hi = start;
        lo = start / 2.0;
        let mut steps = 0;
        while is_zero(lo) {
            hi = lo;
            lo /= 2.0;
            steps += 1;
            if steps > 60 {
                return Ok(hi);
            }
        }
    } else {
        lo = start;
        hi = start * 2.0;
        let mut steps = 0;
        while !is_zero(hi) {
            lo = hi;
            hi *= 2.0;
            steps += 1;
            if steps > 60 {
                return Err(Error::degenerate("no λ up to 2⁶⁰·λ₀ shrinks the fit to zero"));
            }
        }
    }
    while hi / lo > 1.0 + 1e-3 {
        let mid = (lo * hi).sqrt();
        if is_zero(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `size` values log-uniform on `[floor·λ₀, λ₀]`, descending, with both
/// endpoints exact.
pub fn lambda_grid(lambda0: f64, cfg: &CvConfig) -> Result<Vec<f64>> {
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(Error::Domain(format!("λ₀ must be positive and finite, got {lambda0}")));
    }
    if !(cfg.grid_floor_ratio > 0.0 && cfg.grid_floor_ratio < 1.0) || cfg.grid_size < 1 {
        return Err(Error::Config("invalid grid size or floor ratio".into()));
    }
    let m = cfg.grid_size;
    if m == 1 {
        return Ok(vec![lambda0]);
    }
    let log_floor = cfg.grid_floor_ratio.ln();
    let mut grid: Vec<f64> = (0..m).map(|k| lambda0 * (log_floor * k as f64 / (m - 1) as f64).exp()).collect();
    grid[m - 1] = lambda0 * cfg.grid_floor_ratio;
    Ok(grid)
}

/// RoCV: `−(1/γ₀) log{(1/n) Σᵢ f(yᵢ|xᵢ;θᵢ)^γ₀} + (1/(1+γ₀)) log{(1/n) Σᵢ ∫f(y|xᵢ;θᵢ)^{1+γ₀}dy}`
/// with `θᵢ = params_per_point[i]`.
pub fn rocv_score(held_out: &Dataset, params_per_point: &[ModelParams], gamma0: f64) -> Result<f64> {
    if !(gamma0 > 0.0 && gamma0.is_finite()) {
        return Err(Error::Domain(format!("gamma0 must be positive, got {gamma0}")));
    }
    let n = held_out.n();
    if params_per_point.len() != n {
        return Err(Error::InvalidInput(format!(
            "need one parameter set per held-out row ({n}), got {}",
            params_per_point.len()
        )));
    }
    let mut log_f = Vec::with_capacity(n);
    let mut log_pi = Vec::with_capacity(n);
    for (i, theta) in params_per_point.iter().enumerate() {
        theta.validate()?;
        if theta.sigma2 < crate::model::SIGMA2_VALID_FLOOR {
            return Err(Error::degenerate("held-out variance below the validity floor"));
        }
        let r = held_out.y()[i] - theta.predict_row(held_out, i);
        let lf = -0.5 * (2.0 * std::f64::consts::PI * theta.sigma2).ln() - r * r / (2.0 * theta.sigma2);
        log_f.push(gamma0 * lf);
        log_pi.push(log_power_integral(theta.sigma2, gamma0)?);
    }
    let first = log_mean_exp(&log_f);
    if !first.is_finite() {
        return Err(Error::degenerate("every held-out density term underflowed"));
    }
    Ok(-first / gamma0 + log_mean_exp(&log_pi) / (1.0 + gamma0))
}

/// Fold label of every row. Rows are ranked by content, the ranks are
/// shuffled with `seed`, and the t-th shuffled row goes to fold `t mod K`.
pub fn fold_assignment(data: &Dataset, folds: Folds, seed: u64) -> Vec<usize> {
    let n = data.n();
    let k = folds.count(n);
    let canonical = data.canonical_row_order();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut label = vec![0; n];
    for (t, &pos) in perm.iter().enumerate() {
        label[canonical[pos]] = t % k;
    }
    label
}

pub(crate) fn training_rows(labels: &[usize], fold: usize) -> Vec<usize> {
    (0..labels.len()).filter(|&i| labels[i] != fold).collect()
}

fn diagnostic(fold: usize, res: &Result<FitResult>) -> FoldDiagnostic {
    match res {
        Ok(r) => FoldDiagnostic {
            fold,
            converged: r.converged,
            mm_iterations: r.mm_iterations,
            kkt_violation: r.kkt_violation,
            final_loss: r.final_loss(),
            nonzero: r.active_set.len(),
            error: r.degenerate.then(|| "variance reached the floor".to_string()),
        },
        Err(e) => FoldDiagnostic {
            fold,
            converged: false,
            mm_iterations: 0,
            kkt_violation: f64::NAN,
            final_loss: f64::NAN,
            nonzero: 0,
            error: Some(e.to_string()),
        },
    }
}

fn fit_path(data: &Dataset, cfg: &FitConfig, grid: &[f64], init: &ModelParams, warm: bool) -> Vec<Result<FitResult>> {
    let mut out: Vec<Result<FitResult>> = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let start = match out.last() {
            Some(Ok(prev)) if warm && !prev.degenerate => prev.params.clone(),
            _ => init.clone(),
        };
        out.push(fit(data, &cfg.with_lambda(lambda), &start));
    }
    out
}

/// Picks the smallest score among non-excluded entries; ties go to the
/// earlier (larger) λ.
pub(crate) fn argmin_first(scores: &[f64], excluded: &[Option<String>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &s) in scores.iter().enumerate() {
        if excluded[k].is_some() || !s.is_finite() {
            continue;
        }
        if best.is_none_or(|b| s < scores[b]) {
            best = Some(k);
        }
    }
    best
}

/// Anchors a grid per `cv.anchor`, runs K-fold RoCV over it and refits on
/// the full data at the selected λ. The rows are put in canonical order
/// first, so the outcome does not depend on how the input rows are ordered.
pub fn cross_validate(data: &Dataset, cfg: &FitConfig, cv: &CvConfig, init: &ModelParams) -> Result<CvReport> {
    cfg.validate()?;
    cv.validate(data.n())?;
    let data = data.select_rows(&data.canonical_row_order())?;
    let anchor = match cv.anchor {
        GridAnchor::Kkt => lambda_zero(&data, cfg.gamma, init)?,
        GridAnchor::Collapse => collapse_lambda(&data, cfg, init)?,
    };
    if !(anchor > 0.0) {
        return Err(Error::degenerate("the response is uncorrelated with every predictor (λ₀ = 0)"));
    }
    let grid = lambda_grid(anchor, cv)?;
    cross_validate_on_grid(&data, cfg, cv, init, grid)
}

/// RoCV over a caller-supplied descending grid; rows are used as given.
pub fn cross_validate_on_grid(
    data: &Dataset,
    cfg: &FitConfig,
    cv: &CvConfig,
    init: &ModelParams,
    grid: Vec<f64>,
) -> Result<CvReport> {
    cv.validate(data.n())?;
    let n = data.n();
    let k = cv.folds.count(n);
    let labels = fold_assignment(data, cv.folds, cv.seed);
    let subsets: Vec<Dataset> = (0..k).map(|f| data.select_rows(&training_rows(&labels, f))).collect::<Result<_>>()?;

    // task 0 is the full data, task f+1 leaves fold f out
    let paths: Vec<Vec<Result<FitResult>>> = (0..=k)
        .into_par_iter()
        .map(|t| {
            let d = if t == 0 { data } else { &subsets[t - 1] };
            fit_path(d, cfg, &grid, init, cv.warm_start)
        })
        .collect();

    let m = grid.len();
    let mut scores = vec![f64::NAN; m];
    let mut excluded: Vec<Option<String>> = vec![None; m];
    let mut fold_diagnostics = Vec::with_capacity(m);
    let mut path = Vec::with_capacity(m);
    for li in 0..m {
        let diags: Vec<FoldDiagnostic> = (0..k).map(|f| diagnostic(f, &paths[f + 1][li])).collect();
        let full = &paths[0][li];
        path.push(full.as_ref().ok().map(|r| r.params.clone()));
        if let Some(bad) = diags.iter().find(|d| d.error.is_some()) {
            excluded[li] = Some(format!("fold {}: {}", bad.fold, bad.error.as_deref().unwrap_or("")));
        }
        match full {
            Err(e) => excluded[li] = Some(format!("full-data fit: {e}")),
            Ok(r) if r.degenerate => excluded[li] = Some("full-data fit: variance reached the floor".into()),
            Ok(r) if excluded[li].is_none() => {
                let per_point: Vec<ModelParams> = (0..n)
                    .map(|i| {
                        let fold_fit = paths[labels[i] + 1][li].as_ref().expect("checked above");
                        ModelParams { sigma2: r.params.sigma2, ..fold_fit.params.clone() }
                    })
                    .collect();
                match rocv_score(data, &per_point, cv.gamma0) {
                    Ok(s) => scores[li] = s,
                    Err(e) => excluded[li] = Some(format!("score: {e}")),
                }
            }
            Ok(_) => {}
        }
        fold_diagnostics.push(diags);
    }

    let best_index = argmin_first(&scores, &excluded).ok_or_else(|| {
        let first = excluded.iter().flatten().next().map_or("", String::as_str);
        Error::degenerate(format!("every λ in the grid was excluded from selection (largest λ: {first})"))
    })?;
    let final_fit = paths[0][best_index].as_ref().expect("best λ has a full-data fit").clone();
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
