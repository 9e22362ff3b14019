//! Starting points for the non-convex MM iteration.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{lasso_fit, lasso_fit_from, lasso_lambda_max, lasso_objective};
use crate::data::{Dataset, ModelParams};
use crate::error::{Error, Result};
use crate::numeric::{mad, median, MAD_SCALE};

/// σ² used when the robust scale of the data is zero.
pub const SCALE_FLOOR: f64 = 1e-10;

/// How each RANSAC subset is fitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SubsetSolver {
    /// Least squares, ridge-stabilized when singular.
    LeastSquares,
    /// Lasso at `lambda_ratio·λmax` of the subset; with `relaxed`, least
    /// squares is then refitted on the selected columns over the same rows.
    Lasso { lambda_ratio: f64, relaxed: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    /// `None` picks `p + 2` when that fits in n, else `min(n, max(p/2, 10))`.
    pub subset_size: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    /// `None` uses least squares when `p + 2 ≤ n` and the Lasso otherwise.
    pub solver: Option<SubsetSolver>,
    /// Concentration steps applied to the best trials: refit on the
    /// `⌈coverage·n⌉` rows with the smallest residuals, repeat.
    pub refine_steps: usize,
    pub coverage: f64,
    /// How many of the best-scoring trials are refined before picking one.
    pub refine_starts: usize,
    /// When set, concentration steps refit a plain Lasso at this fraction of
    /// the full-data λmax and minimize the trimmed Lasso objective instead of
    /// the median squared residual.
    pub trimmed_lasso_ratio: Option<f64>,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            subset_size: None,
            trials: 200,
            seed: 0,
            solver: None,
            refine_steps: 5,
            coverage: 0.75,
            refine_starts: 10,
            trimmed_lasso_ratio: None,
        }
    }
}

impl RansacConfig {
    pub fn resolved_subset_size(&self, n: usize, p: usize) -> usize {
        self.subset_size.unwrap_or(if p + 2 <= n { p + 2 } else { n.min((p / 2).max(10)) })
    }

    pub fn resolved_solver(&self, n: usize, p: usize) -> SubsetSolver {
        self.solver.unwrap_or(if p + 2 <= n {
            SubsetSolver::LeastSquares
        } else {
            SubsetSolver::Lasso { lambda_ratio: DEFAULT_LASSO_RATIO, relaxed: true }
        })
    }
}

/// Subset Lasso penalty as a fraction of the subset's λmax.
pub const DEFAULT_LASSO_RATIO: f64 = 0.05;

/// Starting point plus a flag for a zero robust scale.
#[derive(Debug, Clone, PartialEq)]
pub struct InitEstimate {
    pub params: ModelParams,
    pub degenerate: bool,
}

/// Candidate from one RANSAC trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RansacTrial {
    pub index: usize,
    pub score: f64,
    pub params: ModelParams,
}

fn design(data: &Dataset, rows: &[usize]) -> DMatrix<f64> {
    let p = data.p();
    DMatrix::from_fn(rows.len(), p + 1, |i, j| if j == 0 { 1.0 } else { data.x()[(rows[i], j - 1)] })
}

/// Least squares of y on `[1, x]` over `rows`; ridge-stabilized with
/// `δ = 1e-6·trace(DᵀD)/(p+1)` when the normal matrix is singular.
pub fn subset_least_squares(data: &Dataset, rows: &[usize]) -> Result<DVector<f64>> {
    let d = design(data, rows);
    let y = DVector::from_fn(rows.len(), |i, _| data.y()[rows[i]]);
    let k = rows.len();
    let m = d.ncols();
    if k >= m {
        let gram = d.transpose() * &d;
        let rhs = d.transpose() * &y;
        if let Some(ch) = gram.clone().cholesky() {
            let sol = ch.solve(&rhs);
            if sol.iter().all(|v| v.is_finite()) {
                return Ok(sol);
            }
        }
        let delta = 1e-6 * gram.trace() / m as f64;
        let ridged = gram + DMatrix::identity(m, m) * delta;
        return ridged
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::degenerate("ridge-stabilized subset system is not positive definite"));
    }
    // fewer rows than unknowns: (DᵀD + δI)⁻¹Dᵀy = Dᵀ(DDᵀ + δI)⁻¹y
    let outer = &d * d.transpose();
    let delta = 1e-6 * outer.trace() / m as f64;
    let ridged = outer + DMatrix::identity(k, k) * delta;
    let ch = ridged
        .cholesky()
        .ok_or_else(|| Error::degenerate("ridge-stabilized subset system is not positive definite"))?;
    Ok(d.transpose() * ch.solve(&y))
}

/// Coefficients `(β0, β)` fitted on `rows` with `solver`.
pub fn subset_fit(data: &Dataset, rows: &[usize], solver: SubsetSolver) -> Result<DVector<f64>> {
    match solver {
        SubsetSolver::LeastSquares => subset_least_squares(data, rows),
        SubsetSolver::Lasso { lambda_ratio, relaxed } => {
            let sub = data.select_rows(rows)?;
            let lambda = lambda_ratio * lasso_lambda_max(&sub);
            let coef = lasso_fit(&sub, lambda, 1e-7, 10_000)?.params.coefficients();
            if !relaxed {
                return Ok(coef);
            }
            relaxed_refit(data, rows, coef)
        }
    }
}

/// Least squares on the nonzero columns of `coef` over `rows`; `coef` is
/// returned unchanged when that system is not overdetermined.
fn relaxed_refit(data: &Dataset, rows: &[usize], coef: DVector<f64>) -> Result<DVector<f64>> {
    let support: Vec<usize> = (0..data.p()).filter(|&j| coef[j + 1] != 0.0).collect();
    if support.len() + 2 > rows.len() {
        return Ok(coef);
    }
    let reduced = Dataset::new(data.x().select_columns(&support), data.y().clone())?;
    let ls = subset_least_squares(&reduced, rows)?;
    let mut out = DVector::zeros(data.p() + 1);
    out[0] = ls[0];
    for (k, &j) in support.iter().enumerate() {
        out[j + 1] = ls[k + 1];
    }
    Ok(out)
}

fn params_from_coefficients(data: &Dataset, coef: &DVector<f64>) -> (ModelParams, f64, bool) {
    let p = data.p();
    let mut params = ModelParams { beta0: coef[0], beta: DVector::from_fn(p, |j, _| coef[j + 1]), sigma2: 1.0 };
    let r = params.residuals(data);
    let sq: Vec<f64> = r.iter().map(|v| v * v).collect();
    let abs: Vec<f64> = r.iter().map(|v| v.abs()).collect();
    let med_abs = median(&abs);
    let scale = MAD_SCALE * med_abs;
    let degenerate = !(scale * scale >= SCALE_FLOOR);
    params.sigma2 = if degenerate { SCALE_FLOOR } else { scale * scale };
    (params, median(&sq), degenerate)
}

/// Every RANSAC trial, in trial order. Trial `t` draws its subset from the
/// ChaCha8 stream `t` of `seed`, so the result does not depend on scheduling.
pub fn ransac_trials(data: &Dataset, cfg: &RansacConfig) -> Result<Vec<RansacTrial>> {
    let n = data.n();
    if n < 3 {
        return Err(Error::InvalidInput(format!("RANSAC needs at least 3 rows, got {n}")));
    }
    if cfg.trials == 0 {
        return Err(Error::Config("RANSAC needs at least one trial".into()));
    }
    let k = cfg.resolved_subset_size(n, data.p());
    let solver = cfg.resolved_solver(n, data.p());
    if k < 2 || k > n {
        return Err(Error::Config(format!("subset size {k} must lie in [2, {n}]")));
    }
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let mut rows = sample(&mut rng, n, k).into_vec();
            rows.sort_unstable();
            let coef = subset_fit(data, &rows, solver)?;
            let (params, score, _) = params_from_coefficients(data, &coef);
            Ok(RansacTrial { index: t, score, params })
        })
        .collect()
}

/// RANSAC-lite: the trial with the smallest median squared residual over all
/// rows (ties to the earlier trial), with `σ² = (1.4826·median|r|)²`.
pub fn ransac_init(data: &Dataset, subset_size: usize, trials: usize, seed: u64) -> Result<ModelParams> {
    let cfg = RansacConfig { subset_size: Some(subset_size), trials, seed, refine_steps: 0, ..RansacConfig::default() };
    ransac_with(data, &cfg)
}

pub fn ransac_with(data: &Dataset, cfg: &RansacConfig) -> Result<ModelParams> {
    let mut trials: Vec<RansacTrial> = ransac_trials(data, cfg)?.into_iter().filter(|t| t.score.is_finite()).collect();
    if trials.is_empty() {
        return Err(Error::degenerate("no RANSAC trial produced a finite score"));
    }
    trials.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.index.cmp(&b.index)));
    if cfg.refine_steps == 0 {
        return Ok(trials.swap_remove(0).params);
    }
    let starts = cfg.refine_starts.max(1);
    let refined: Vec<(ModelParams, f64)> = match cfg.trimmed_lasso_ratio {
        None => {
            trials.truncate(starts);
            trials.into_par_iter().map(|t| concentrate_median(data, cfg, t.params, t.score)).collect::<Result<_>>()?
        }
        Some(ratio) => {
            let lambda = ratio * lasso_lambda_max(data);
            let mut screened: Vec<(ModelParams, f64)> = trials
                .into_par_iter()
                .map(|t| concentrate_trimmed(data, cfg, lambda, t.params, SCREEN_STEPS.min(cfg.refine_steps)))
                .collect::<Result<_>>()?;
            screened.sort_by(|a, b| a.1.total_cmp(&b.1));
            screened.truncate(starts);
            screened
                .into_par_iter()
                .map(|(params, _)| concentrate_trimmed(data, cfg, lambda, params, cfg.refine_steps))
                .collect::<Result<_>>()?
        }
    };
    let mut best = refined
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.1.total_cmp(&b.1).then(i.cmp(j)))
        .expect("at least one start")
        .1
         .0;
    if cfg.trimmed_lasso_ratio.is_some() {
        if let SubsetSolver::Lasso { relaxed: true, .. } = cfg.resolved_solver(data.n(), data.p()) {
            let rows = smallest_residual_rows(data, &best, coverage_rows(cfg, data.n()));
            best = params_from_coefficients(data, &relaxed_refit(data, &rows, best.coefficients())?).0;
        }
    }
    Ok(best)
}

/// Concentration steps every trial gets before the best starts are chosen.
const SCREEN_STEPS: usize = 2;

fn coverage_rows(cfg: &RansacConfig, n: usize) -> usize {
    ((cfg.coverage * n as f64).ceil() as usize).clamp(2, n)
}

fn smallest_residual_rows(data: &Dataset, params: &ModelParams, h: usize) -> Vec<usize> {
    let r = params.residuals(data);
    let mut rows: Vec<usize> = (0..data.n()).collect();
    rows.sort_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()).then(a.cmp(&b)));
    rows.truncate(h);
    rows.sort_unstable();
    rows
}

fn concentrate_median(
    data: &Dataset,
    cfg: &RansacConfig,
    mut params: ModelParams,
    mut score: f64,
) -> Result<(ModelParams, f64)> {
    let h = coverage_rows(cfg, data.n());
    let solver = cfg.resolved_solver(data.n(), data.p());
    for _ in 0..cfg.refine_steps {
        let rows = smallest_residual_rows(data, &params, h);
        let (next, next_score, _) = params_from_coefficients(data, &subset_fit(data, &rows, solver)?);
        if !(next_score < score) {
            break;
        }
        params = next;
        score = next_score;
    }
    Ok((params, score))
}

fn trimmed_objective(data: &Dataset, params: &ModelParams, h: usize, lambda: f64) -> Result<f64> {
    let sub = data.select_rows(&smallest_residual_rows(data, params, h))?;
    Ok(lasso_objective(&sub, params, lambda))
}

fn concentrate_trimmed(
    data: &Dataset,
    cfg: &RansacConfig,
    lambda: f64,
    mut params: ModelParams,
    steps: usize,
) -> Result<(ModelParams, f64)> {
    let h = coverage_rows(cfg, data.n());
    let mut score = trimmed_objective(data, &params, h, lambda)?;
    for _ in 0..steps {
        let sub = data.select_rows(&smallest_residual_rows(data, &params, h))?;
        let coef = lasso_fit_from(&sub, lambda, 1e-7, 10_000, &params)?.params.coefficients();
        let (next, _, _) = params_from_coefficients(data, &coef);
        let next_score = trimmed_objective(data, &next, h, lambda)?;
        if !(next_score < score) {
            break;
        }
        params = next;
        score = next_score;
    }
    Ok((params, score))
}

/// `β = 0`, `β0 = median(y)`, `σ² = (1.4826·MAD(y))²`.
pub fn zero_init(data: &Dataset) -> InitEstimate {
    let y = data.y().as_slice();
    let scale = MAD_SCALE * mad(y);
    let degenerate = !(scale * scale >= SCALE_FLOOR);
    InitEstimate {
        params: ModelParams {
            beta0: median(y),
            beta: DVector::zeros(data.p()),
            sigma2: if degenerate { SCALE_FLOOR } else { scale * scale },
        },
        degenerate,
    }
}

/// Median of squared residuals over all rows.
pub fn median_squared_residual(data: &Dataset, params: &ModelParams) -> f64 {
    let sq: Vec<f64> = params.residuals(data).iter().map(|r| r * r).collect();
    median(&sq)
}
