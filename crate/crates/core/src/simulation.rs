//! Seeded contamination designs and the Monte-Carlo experiment runner.
//!
//! Replication `r` of a design draws from ChaCha8 stream `r` of the design
//! seed, so a replication's data do not depend on how many other
//! replications run or in which order.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::baselines::lasso_cv;
use crate::data::{Dataset, ModelParams};
use crate::error::{Error, Result};
use crate::init::{ransac_with, zero_init, RansacConfig};
use crate::metrics::{mse_coefficients, rmspe, tpr_tnr};
use crate::selection::{cross_validate, CvConfig};
use crate::solver::FitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierPattern {
    /// Covariates i.i.d. N(0, 0.5²), error N(20, 0.5²).
    A,
    /// Covariates i.i.d. N(−1.5, 0.5²), error N(20, 0.5²).
    B,
    None,
}

impl OutlierPattern {
    fn covariate_mean(self) -> f64 {
        match self {
            OutlierPattern::B => -1.5,
            _ => 0.0,
        }
    }
}

pub const OUTLIER_SD: f64 = 0.5;
pub const OUTLIER_ERROR_MEAN: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub pattern: OutlierPattern,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec { n: 100, p: 100, rho: 0.2, epsilon: 0.1, pattern: OutlierPattern::A, noise_sd: 0.5, seed: 0 }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 1 {
            return Err(Error::Config(format!("need n >= 2 and p >= 1, got n = {}, p = {}", self.n, self.p)));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 0.5), got {}", self.epsilon)));
        }
        if self.pattern == OutlierPattern::None && self.epsilon > 0.0 {
            return Err(Error::Config("epsilon > 0 needs an outlier pattern".into()));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd must be positive, got {}", self.noise_sd)));
        }
        Ok(())
    }

    pub fn contaminated_count(&self) -> usize {
        (self.epsilon * self.n as f64).floor() as usize
    }
}

/// `(β0, β1, ..., βp)` with β1 = 1, β2 = 2, β4 = 4, β7 = 7, β11 = 11 (those
/// that exist for the given p) and zeros elsewhere.
pub fn true_coefficients(p: usize) -> DVector<f64> {
    let mut beta = DVector::zeros(p + 1);
    for j in [1usize, 2, 4, 7, 11] {
        if j <= p {
            beta[j] = j as f64;
        }
    }
    beta
}

/// A generated training/test pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub train: Dataset,
    pub test: Dataset,
    /// Training rows (after shuffling) that were drawn as outliers, ascending.
    pub contaminated_rows: Vec<usize>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `x₁ = z₁`, `xⱼ = ρxⱼ₋₁ + √(1−ρ²)zⱼ`, which has `cov(xᵢ, xⱼ) = ρ^{|i−j|}`.
fn ar1_row(rng: &mut ChaCha8Rng, p: usize, rho: f64, out: &mut [f64]) {
    let s = (1.0 - rho * rho).sqrt();
    out[0] = normal(rng);
    for j in 1..p {
        out[j] = rho * out[j - 1] + s * normal(rng);
    }
}

fn clean_rows(
    rng: &mut ChaCha8Rng,
    spec: &SimulationSpec,
    beta: &DVector<f64>,
    rows: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let p = spec.p;
    let mut x = DMatrix::zeros(rows, p);
    let mut y = DVector::zeros(rows);
    let mut buf = vec![0.0; p];
    for i in 0..rows {
        ar1_row(rng, p, spec.rho, &mut buf);
        let mut mean = beta[0];
        for j in 0..p {
            x[(i, j)] = buf[j];
            mean += beta[j + 1] * buf[j];
        }
        y[i] = mean + spec.noise_sd * normal(rng);
    }
    (x, y)
}

/// Replication 0 of `spec`.
pub fn generate(spec: &SimulationSpec) -> Result<Simulated> {
    generate_replication(spec, 0)
}

/// Training rows: the first `⌊εn⌋` are outliers, the rest clean, then the
/// rows are shuffled. Test rows: n clean rows drawn afterwards.
pub fn generate_replication(spec: &SimulationSpec, replication: u64) -> Result<Simulated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(replication);
    let (n, p) = (spec.n, spec.p);
    let beta = true_coefficients(p);
    let m = spec.contaminated_count();

    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mu = spec.pattern.covariate_mean();
    for i in 0..m {
        let mut mean = beta[0];
        for j in 0..p {
            let v = mu + OUTLIER_SD * normal(&mut rng);
            x[(i, j)] = v;
            mean += beta[j + 1] * v;
        }
        y[i] = mean + OUTLIER_ERROR_MEAN + OUTLIER_SD * normal(&mut rng);
    }
    let (cx, cy) = clean_rows(&mut rng, spec, &beta, n - m);
    for i in m..n {
        for j in 0..p {
            x[(i, j)] = cx[(i - m, j)];
        }
        y[i] = cy[i - m];
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut contaminated_rows: Vec<usize> = (0..n).filter(|&pos| order[pos] < m).collect();
    contaminated_rows.sort_unstable();
    let train = Dataset::new(x, y)?.select_rows(&order)?.with_true_beta(beta.clone())?;

    let (tx, ty) = clean_rows(&mut rng, spec, &beta, n);
    let test = Dataset::new(tx, ty)?.with_true_beta(beta)?;
    Ok(Simulated { train, test, contaminated_rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Sparse γ-linear regression with RoCV-selected λ.
    Gamma { gamma: f64 },
    /// Lasso with squared-error CV.
    Lasso,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Gamma { gamma } => format!("gamma({gamma})"),
            Method::Lasso => "lasso".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitMethod {
    Ransac(RansacConfig),
    Zero,
}

/// Everything besides the design that a run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    /// Solver tolerances; γ and λ are overridden per method and grid point.
    pub fit: FitConfig,
    pub cv: CvConfig,
    pub init: InitMethod,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            fit: FitConfig::new(0.1, 0.0),
            cv: CvConfig::default(),
            init: InitMethod::Ransac(RansacConfig::default()),
        }
    }
}

/// Per-replication outcome for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub replication: u64,
    pub method: Method,
    pub rmspe: f64,
    pub mse: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub lambda: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub rmspe: f64,
    pub mse: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub spec: SimulationSpec,
    pub replications: u64,
    pub summaries: Vec<MethodSummary>,
    /// Ordered by (replication, method index).
    pub records: Vec<ReplicationRecord>,
}

/// Fits one method on a training set and returns the estimate and λ used.
pub fn fit_method(
    method: Method,
    train: &Dataset,
    settings: &ExperimentSettings,
    seed: u64,
) -> Result<(ModelParams, f64)> {
    let cv = CvConfig { seed, ..settings.cv.clone() };
    match method {
        Method::Gamma { gamma } => {
            let init = match &settings.init {
                InitMethod::Ransac(cfg) => ransac_with(train, &RansacConfig { seed, ..cfg.clone() })?,
                InitMethod::Zero => zero_init(train).params,
            };
            let cfg = FitConfig { gamma, ..settings.fit.clone() };
            let report = cross_validate(train, &cfg, &cv, &init)?;
            Ok((report.final_fit.params, report.best_lambda))
        }
        Method::Lasso => {
            let report = lasso_cv(train, &cv, None)?;
            Ok((report.final_fit.params, report.best_lambda))
        }
    }
}

fn evaluate(rep: u64, method: Method, sim: &Simulated, fitted: Result<(ModelParams, f64)>) -> ReplicationRecord {
    let truth = sim.train.true_beta().expect("simulated data carry the truth");
    let scored = fitted.and_then(|(params, lambda)| {
        let (tpr, tnr) = tpr_tnr(&truth.rows(1, truth.len() - 1).into_owned(), &params.beta)?;
        Ok(ReplicationRecord {
            replication: rep,
            method,
            rmspe: rmspe(&sim.test, &params),
            mse: mse_coefficients(truth, &params.coefficients())?,
            tpr,
            tnr,
            lambda,
            error: None,
        })
    });
    scored.unwrap_or_else(|e| ReplicationRecord {
        replication: rep,
        method,
        rmspe: f64::NAN,
        mse: f64::NAN,
        tpr: f64::NAN,
        tnr: f64::NAN,
        lambda: f64::NAN,
        error: Some(e.to_string()),
    })
}

/// Runs `replications` seeded replications of `spec` for every method, in
/// parallel over replications. Failed fits are counted and left out of the
/// means.
pub fn run_experiment(
    spec: &SimulationSpec,
    methods: &[Method],
    replications: u64,
    settings: &ExperimentSettings,
) -> Result<ExperimentReport> {
    spec.validate()?;
    settings.cv.validate(spec.n)?;
    if replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    let per_rep: Vec<Result<Vec<ReplicationRecord>>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let sim = generate_replication(spec, rep)?;
            let seed = spec.seed.wrapping_add(rep);
            Ok(methods.iter().map(|&m| evaluate(rep, m, &sim, fit_method(m, &sim.train, settings, seed))).collect())
        })
        .collect();
    let mut records = Vec::new();
    for r in per_rep {
        records.extend(r?);
    }
    let summaries = methods
        .iter()
        .map(|&m| {
            let ok: Vec<&ReplicationRecord> = records.iter().filter(|r| r.method == m && r.error.is_none()).collect();
            let failures = records.iter().filter(|r| r.method == m && r.error.is_some()).count();
            let mean = |f: fn(&ReplicationRecord) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    crate::numeric::compensated_sum(ok.iter().map(|r| f(r))) / ok.len() as f64
                }
            };
            MethodSummary {
                method: m,
                rmspe: mean(|r| r.rmspe),
                mse: mean(|r| r.mse),
                tpr: mean(|r| r.tpr),
                tnr: mean(|r| r.tnr),
                successes: ok.len(),
                failures,
            }
        })
        .collect();
    Ok(ExperimentReport { spec: spec.clone(), replications, summaries, records })
}
