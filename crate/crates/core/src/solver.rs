//! MM outer loop with an active-set coordinate-descent inner loop.
//!
//! Within an MM step the weights `α` are frozen at the current iterate, the
//! coefficients are cycled in ascending order until the active set settles,
//! and σ² is updated once at the end of the step.

use nalgebra::DVector;

use crate::data::{Dataset, ModelParams};
use crate::error::{Error, Result};
use crate::model::{mm_weights, penalized_loss, GammaConfig, MmWeights};
use crate::numeric::compensated_sum;

/// Largest accepted increase of the penalized loss between MM iterates.
pub const DESCENT_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub max_mm_iters: usize,
    pub max_cd_sweeps: usize,
    pub tol_loss: f64,
    pub tol_param: f64,
    pub sigma2_floor: f64,
    /// The loss and parameter tests only stop the loop once the KKT slack
    /// (see [`check_kkt`]) is within this bound.
    pub kkt_tol: f64,
    /// Fit on columns centered and scaled to unit (population) standard
    /// deviation, then map the coefficients back.
    pub standardize: bool,
}

impl FitConfig {
    pub fn new(gamma: f64, lambda: f64) -> Self {
        FitConfig {
            gamma,
            lambda,
            max_mm_iters: 500,
            max_cd_sweeps: 100,
            tol_loss: 1e-7,
            tol_param: 1e-8,
            sigma2_floor: 1e-10,
            kkt_tol: 1e-5,
            standardize: false,
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        FitConfig { lambda, ..self.clone() }
    }

    pub fn gamma_config(&self) -> GammaConfig {
        GammaConfig { gamma: self.gamma, lambda: self.lambda }
    }

    pub fn validate(&self) -> Result<()> {
        self.gamma_config().validate()?;
        if self.max_mm_iters < 1 || self.max_cd_sweeps < 1 {
            return Err(Error::Config("iteration caps must be at least 1".into()));
        }
        for (name, v) in [
            ("tol_loss", self.tol_loss),
            ("tol_param", self.tol_param),
            ("sigma2_floor", self.sigma2_floor),
            ("kkt_tol", self.kkt_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    /// Penalized loss at the initial point and after every accepted MM step.
    pub loss_trajectory: Vec<f64>,
    pub active_set: Vec<usize>,
    pub mm_iterations: usize,
    pub converged: bool,
    pub kkt_violation: f64,
    /// σ² was clamped to the floor at some step.
    pub degenerate: bool,
    /// Columns whose weighted norm vanished at some step; their coefficient
    /// was held at zero.
    pub zero_weight_columns: Vec<usize>,
}

impl FitResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trajectory.last().expect("trajectory holds the initial loss")
    }
}

/// Process-wide counters over every MM step taken by [`fit`].
pub mod telemetry {
    use std::sync::atomic::{AtomicU64, Ordering};

    static MM_STEPS: AtomicU64 = AtomicU64::new(0);
    static FITS: AtomicU64 = AtomicU64::new(0);
    static MAX_INCREASE_BITS: AtomicU64 = AtomicU64::new(0);

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Snapshot {
        pub fits: u64,
        pub mm_steps: u64,
        /// Largest observed `L(θ^(m+1)) − L(θ^(m))`, or 0 if none was positive.
        pub max_loss_increase: f64,
    }

    pub(crate) fn record_step(increase: f64) {
        MM_STEPS.fetch_add(1, Ordering::Relaxed);
        if increase > 0.0 || increase.is_nan() {
            let v = if increase.is_nan() { f64::INFINITY } else { increase };
            // nonnegative floats order like their bit patterns
            MAX_INCREASE_BITS.fetch_max(v.to_bits(), Ordering::Relaxed);
        }
    }

    pub(crate) fn record_fit() {
        FITS.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot() -> Snapshot {
        Snapshot {
            fits: FITS.load(Ordering::Relaxed),
            mm_steps: MM_STEPS.load(Ordering::Relaxed),
            max_loss_increase: f64::from_bits(MAX_INCREASE_BITS.load(Ordering::Relaxed)),
        }
    }
}

/// `sign(t)·max(|t| − thr, 0)`; exactly zero when `|t| ≤ thr`.
pub fn soft_threshold(t: f64, thr: f64) -> f64 {
    debug_assert!(thr >= 0.0);
    if t > thr {
        t - thr
    } else if t < -thr {
        t + thr
    } else {
        0.0
    }
}

fn column(data: &Dataset, j: usize) -> &[f64] {
    let n = data.n();
    &data.x().as_slice()[j * n..(j + 1) * n]
}

/// `β0 ← Σᵢ αᵢ(yᵢ − xᵢᵀβ)`.
pub fn update_intercept(data: &Dataset, beta: &DVector<f64>, weights: &MmWeights) -> f64 {
    let fitted = data.x() * beta;
    compensated_sum(weights.as_slice().iter().zip(data.y().iter()).zip(fitted.iter()).map(|((a, y), f)| a * (y - f)))
}

/// `Σᵢ αᵢ xᵢⱼ²`.
pub fn weighted_column_norm(data: &Dataset, j: usize, weights: &MmWeights) -> f64 {
    compensated_sum(column(data, j).iter().zip(weights.as_slice()).map(|(x, a)| a * x * x))
}

/// `βⱼ ← S(Σᵢ αᵢ(yᵢ − β0 − rᵢ^{[−j]})xᵢⱼ, σ²λ) / Σᵢ αᵢxᵢⱼ²`.
///
/// Returns 0 when the weighted column norm vanishes.
pub fn update_coefficient(j: usize, data: &Dataset, params: &ModelParams, weights: &MmWeights, lambda: f64) -> f64 {
    let norm = weighted_column_norm(data, j, weights);
    if norm <= 0.0 {
        return 0.0;
    }
    let r = params.residuals(data);
    let xj = column(data, j);
    let bj = params.beta[j];
    let num = compensated_sum((0..data.n()).map(|i| weights.as_slice()[i] * (r[i] + xj[i] * bj) * xj[i]));
    soft_threshold(num, params.sigma2 * lambda) / norm
}

/// `σ² ← (1+γ)·Σᵢ αᵢ(yᵢ − β0 − xᵢᵀβ)²`, unfloored.
pub fn update_variance(data: &Dataset, params: &ModelParams, weights: &MmWeights, gamma: f64) -> Result<f64> {
    let r = params.residuals(data);
    let wrss = crate::model::weighted_sq_sum(weights, r.as_slice());
    if !(wrss > 0.0) {
        return Err(Error::degenerate("weighted residuals vanish (perfect interpolation)"));
    }
    Ok((1.0 + gamma) * wrss)
}

/// Coordinate descent state for one MM step.
struct Cd<'a> {
    data: &'a Dataset,
    alpha: &'a [f64],
    norms: Vec<f64>,
    resid: Vec<f64>,
}

impl<'a> Cd<'a> {
    fn new(data: &'a Dataset, alpha: &'a [f64], params: &ModelParams) -> Self {
        let norms = (0..data.p())
            .map(|j| {
                let xj = column(data, j);
                (0..data.n()).map(|i| alpha[i] * xj[i] * xj[i]).sum::<f64>()
            })
            .collect();
        Cd { data, alpha, norms, resid: params.residuals(data).as_slice().to_vec() }
    }

    fn intercept(&mut self, params: &mut ModelParams) -> f64 {
        let shift: f64 = self.alpha.iter().zip(&self.resid).map(|(a, r)| a * r).sum();
        if shift != 0.0 {
            params.beta0 += shift;
            for r in &mut self.resid {
                *r -= shift;
            }
        }
        shift.abs()
    }

    fn coordinate(&mut self, j: usize, params: &mut ModelParams, thr: f64) -> f64 {
        let norm = self.norms[j];
        let old = params.beta[j];
        let new = if norm > 0.0 {
            let xj = column(self.data, j);
            let grad: f64 = (0..xj.len()).map(|i| self.alpha[i] * self.resid[i] * xj[i]).sum();
            soft_threshold(grad + norm * old, thr) / norm
        } else {
            0.0
        };
        let delta = new - old;
        if delta != 0.0 {
            params.beta[j] = new;
            let xj = column(self.data, j);
            for (r, x) in self.resid.iter_mut().zip(xj) {
                *r -= x * delta;
            }
        }
        delta.abs()
    }

    fn sweep(&mut self, params: &mut ModelParams, thr: f64, coords: impl Iterator<Item = usize>) -> f64 {
        let mut change = self.intercept(params);
        for j in coords {
            change = change.max(self.coordinate(j, params, thr));
        }
        change
    }
}

/// One coordinate-descent pass with frozen weights: β0 first, then βⱼ in
/// ascending order (only the currently nonzero ones when `active_only`).
pub fn cd_sweep(
    data: &Dataset,
    params: &ModelParams,
    weights: &MmWeights,
    lambda: f64,
    active_only: bool,
) -> ModelParams {
    let mut out = params.clone();
    let active: Vec<usize> = if active_only { params.active_set() } else { (0..data.p()).collect() };
    let mut cd = Cd::new(data, weights.as_slice(), params);
    cd.sweep(&mut out, params.sigma2 * lambda, active.into_iter());
    out
}

/// Fits the sparse γ-linear regression from `init`.
pub fn fit(data: &Dataset, cfg: &FitConfig, init: &ModelParams) -> Result<FitResult> {
    cfg.validate()?;
    init.validate()?;
    if init.p() != data.p() {
        return Err(Error::InvalidInput(format!(
            "initial coefficients have length {} but the data has {} predictors",
            init.p(),
            data.p()
        )));
    }
    telemetry::record_fit();
    if cfg.standardize {
        fit_standardized(data, cfg, init)
    } else {
        fit_raw(data, cfg, init)
    }
}

fn attach(err: Error, params: &ModelParams) -> Error {
    if err.is_degenerate() {
        err.with_last_params(params)
    } else {
        err
    }
}

fn fit_raw(data: &Dataset, cfg: &FitConfig, init: &ModelParams) -> Result<FitResult> {
    let gc = cfg.gamma_config();
    let p = data.p();
    let mut params = init.clone();
    let mut loss = penalized_loss(data, &params, &gc).map_err(|e| attach(e, &params))?;
    let mut trajectory = vec![loss];
    let mut in_active: Vec<bool> = params.beta.iter().map(|b| *b != 0.0).collect();
    let mut converged = false;
    let mut degenerate = false;
    let mut floor_hits = 0usize;
    let mut zero_cols = vec![false; p];
    let mut iterations = 0;

    for _ in 0..cfg.max_mm_iters {
        let weights = mm_weights(data, &params, cfg.gamma).map_err(|e| attach(e, &params))?;
        let prev = params.clone();
        let thr = params.sigma2 * cfg.lambda;
        let mut cd = Cd::new(data, weights.as_slice(), &params);
        for (j, norm) in cd.norms.iter().enumerate() {
            zero_cols[j] |= *norm <= 0.0;
        }

        for _ in 0..=p {
            let active: Vec<usize> = (0..p).filter(|&j| in_active[j]).collect();
            for _ in 0..cfg.max_cd_sweeps {
                if cd.sweep(&mut params, thr, active.iter().copied()) <= cfg.tol_param {
                    break;
                }
            }
            cd.sweep(&mut params, thr, 0..p);
            let mut grew = false;
            for (active, b) in in_active.iter_mut().zip(params.beta.iter()) {
                if !*active && *b != 0.0 {
                    *active = true;
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }

        let mut sigma2 = update_variance(data, &params, &weights, cfg.gamma).map_err(|e| attach(e, &prev))?;
        let floored = sigma2 < cfg.sigma2_floor;
        if floored {
            sigma2 = cfg.sigma2_floor;
            degenerate = true;
            floor_hits += 1;
            if floor_hits >= 2 {
                return Err(Error::degenerate(format!(
                    "sigma2 fell below the floor {:e} repeatedly",
                    cfg.sigma2_floor
                ))
                .with_last_params(&prev));
            }
        }
        params.sigma2 = sigma2;

        let new_loss = penalized_loss(data, &params, &gc).map_err(|e| attach(e, &prev))?;
        let increase = new_loss - loss;
        telemetry::record_step(increase);
        if !(increase <= DESCENT_SLACK) {
            params = prev;
            break;
        }
        iterations += 1;
        trajectory.push(new_loss);

        let mut change = (params.beta0 - prev.beta0).abs().max((params.sigma2 - prev.sigma2).abs());
        for j in 0..p {
            change = change.max((params.beta[j] - prev.beta[j]).abs());
        }
        let loss_small = (new_loss - loss).abs() <= cfg.tol_loss * loss.abs().max(1.0);
        loss = new_loss;
        if !floored && (loss_small || change <= cfg.tol_param) && check_kkt(data, &params, &gc)? <= cfg.kkt_tol {
            converged = true;
            break;
        }
    }

    let kkt_violation = check_kkt(data, &params, &gc)?;
    Ok(FitResult {
        active_set: params.active_set(),
        params,
        loss_trajectory: trajectory,
        mm_iterations: iterations,
        converged: converged && !degenerate,
        kkt_violation,
        degenerate,
        zero_weight_columns: (0..p).filter(|&j| zero_cols[j]).collect(),
    })
}

/// Column means and population standard deviations; constant columns get
/// scale 1 and become identically zero after centering.
fn column_scaling(data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = data.n() as f64;
    let mut means = Vec::with_capacity(data.p());
    let mut sds = Vec::with_capacity(data.p());
    for j in 0..data.p() {
        let xj = column(data, j);
        let m = compensated_sum(xj.iter().copied()) / n;
        let v = compensated_sum(xj.iter().map(|x| (x - m) * (x - m))) / n;
        means.push(m);
        sds.push(if v > 0.0 { v.sqrt() } else { 1.0 });
    }
    (means, sds)
}

fn fit_standardized(data: &Dataset, cfg: &FitConfig, init: &ModelParams) -> Result<FitResult> {
    let (means, sds) = column_scaling(data);
    let x = nalgebra::DMatrix::from_fn(data.n(), data.p(), |i, j| (data.x()[(i, j)] - means[j]) / sds[j]);
    let scaled = Dataset::new(x, data.y().clone())?;
    let to_scaled = |p: &ModelParams| ModelParams {
        beta0: p.beta0 + (0..p.p()).map(|j| p.beta[j] * means[j]).sum::<f64>(),
        beta: DVector::from_fn(p.p(), |j, _| p.beta[j] * sds[j]),
        sigma2: p.sigma2,
    };
    let from_scaled = |p: &ModelParams| {
        let beta = DVector::from_fn(p.p(), |j, _| p.beta[j] / sds[j]);
        ModelParams { beta0: p.beta0 - (0..p.p()).map(|j| beta[j] * means[j]).sum::<f64>(), beta, sigma2: p.sigma2 }
    };
    match fit_raw(&scaled, cfg, &to_scaled(init)) {
        Ok(mut res) => {
            res.params = from_scaled(&res.params);
            res.active_set = res.params.active_set();
            Ok(res)
        }
        Err(Error::DegenerateFit { reason, last_params }) => {
            Err(Error::DegenerateFit { reason, last_params: last_params.map(|p| Box::new(from_scaled(&p))) })
        }
        Err(e) => Err(e),
    }
}

/// Largest KKT slack of the weighted subproblem at weights taken at
/// `params`, divided by σ² so that it measures stationarity of `L_γ` itself.
///
/// With `gⱼ = −Σᵢ αᵢ rᵢ xᵢⱼ`, the slack is `|gⱼ + σ²λ·sign βⱼ|` for nonzero
/// coefficients, `max(|gⱼ| − σ²λ, 0)` for zero ones, and `|Σᵢ αᵢ rᵢ|` for
/// the intercept.
pub fn check_kkt(data: &Dataset, params: &ModelParams, cfg: &GammaConfig) -> Result<f64> {
    let weights = mm_weights(data, params, cfg.gamma)?;
    let alpha = weights.as_slice();
    let r = params.residuals(data);
    let thr = params.sigma2 * cfg.lambda;
    let mut worst = compensated_sum(alpha.iter().zip(r.iter()).map(|(a, ri)| a * ri)).abs();
    for j in 0..data.p() {
        let xj = column(data, j);
        let g = -compensated_sum((0..data.n()).map(|i| alpha[i] * r[i] * xj[i]));
        let b = params.beta[j];
        let slack = if b != 0.0 { (g + thr * b.signum()).abs() } else { (g.abs() - thr).max(0.0) };
        worst = worst.max(slack);
    }
    Ok(worst / params.sigma2)
}
